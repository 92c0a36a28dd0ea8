//! Continuous-control environments with known reward landscapes.
//!
//! Every environment takes actions in `[-1, 1]^d`; out-of-range actions are
//! clipped before the dynamics run and the clipped action is what the
//! returned [`Transition`] records.

mod bandit;
mod point_mass;
mod registry;

pub use bandit::{BanditMode, BanditParams, MultiModalBandit};
pub use point_mass::{ConstrainedPointMass, ConstrainedPointMassParams, PointMass2D, PointMassParams};
pub use registry::{parse_params, EnvRegistry};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// How the per-episode constraint statistic `J_C` aggregates costs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostConvention {
    /// Discounted sum of per-step costs.
    Discounted,
    /// Undiscounted per-step average.
    Average,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub max_episode_len: usize,
    pub has_cost: bool,
    /// Cost bound `d0`; only meaningful when `has_cost`.
    pub cost_bound: f64,
    pub cost_convention: CostConvention,
    pub discount: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Action as applied, after clipping to `[-1, 1]`.
    pub action: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub next_state: Vec<f64>,
    /// Episode is over (terminal state or time limit).
    pub done: bool,
    /// Episode ended in a true terminal state; the value is not bootstrapped.
    pub terminal: bool,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts an episode. The returned state is a deterministic function of
    /// `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Applies `action` (clipped to `[-1, 1]`). Stepping a finished episode
    /// is an error.
    fn step(&mut self, action: &[f64]) -> Result<Transition>;
}

pub(crate) fn clip_action(action: &[f64], dim: usize) -> Result<Vec<f64>> {
    if action.len() != dim {
        return Err(crate::Error::Env(format!(
            "action has {} components, env expects {dim}",
            action.len()
        )));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(crate::Error::Env("non-finite action".into()));
    }
    Ok(action.iter().map(|a| a.clamp(-1.0, 1.0)).collect())
}
