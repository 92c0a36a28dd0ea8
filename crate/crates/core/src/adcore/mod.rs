//! Reverse-mode differentiation, feed-forward networks, Adam, and the
//! parameter checkpoint format.

mod adam;
pub mod checkpoint;
mod mlp;
mod tape;
mod tensor;

pub use adam::{global_norm, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, Record};
pub use mlp::{grad_wrt_input, Activation, BoundMlp, Linear, Mlp};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
