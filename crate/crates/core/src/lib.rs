//! Hamiltonian policy optimization for continuous control.

pub mod adcore;
pub mod agents;
pub mod critic;
pub mod envs;
pub mod error;
pub mod hamiltonian;
pub mod harness;
pub mod policy;
pub mod replay;

pub use error::{Error, Result};
