//! Leapfrog dynamics on the action-value landscape.
//!
//! A base action `a0 ~ pi(.|s)` is paired with a momentum `rho0 ~ N(0, I / beta0)`
//! and moved `K` leapfrog steps on `U = -Q / alpha`. Every step is a composition
//! of shears, so the map has unit Jacobian and the density of the final point
//! equals the density of the starting point.

mod leapfrog;
mod potential;
mod sampler;

pub use leapfrog::{
    conventional_leapfrog_inverse, conventional_leapfrog_step, gated_leapfrog_inverse, gated_leapfrog_step,
    normalize_neg_rows, normalized_neg_grad, BoundGatedNets, GatedLeapfrogNets, GRAD_NORM_FLOOR,
};
pub use potential::{
    kinetic, ActionValue, CriticView, GaussianBumps, LinearValue, PenalizedView, Quadratic, TargetPotential,
};
pub use sampler::{
    joint_log_density, momentum_log_density, BoundHamiltonian, Evolved, HamiltonianPolicy, LyapunovFilter,
    SafeOutcome, SamplingRng, TapeEvolution,
};

use serde::{Deserialize, Serialize};

use crate::adcore::Tensor;
use crate::error::{Error, Result};

/// Paired action and momentum, both `[n, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub action: Tensor,
    pub momentum: Tensor,
}

impl PhasePoint {
    pub fn new(action: Tensor, momentum: Tensor) -> Result<Self> {
        if action.shape() != momentum.shape() {
            return Err(Error::shape(
                "PhasePoint",
                format!("action {:?} vs momentum {:?}", action.shape(), momentum.shape()),
            ));
        }
        let action = action.ensure_finite("PhasePoint action")?;
        let momentum = momentum.ensure_finite("PhasePoint momentum")?;
        Ok(Self { action, momentum })
    }

    pub fn flip_momentum(mut self) -> Self {
        self.momentum = self.momentum.scale(-1.0);
        self
    }
}

/// Which integrator moves the base sample in a given phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Learned gate and transform around the normalized gradient.
    Gated,
    /// Plain leapfrog on `-Q / alpha`.
    Conventional,
    /// No evolution; the base sample is used as is.
    None,
}

/// Whether momentum is drawn with the training or the exploration precision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvolveMode {
    Train,
    Explore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeapfrogConfig {
    pub step_size: f64,
    /// Number of leapfrog steps. Zero turns the sampler into the base policy.
    pub steps: usize,
    /// `1 / sqrt(beta0)` used when training. Zero means `beta0 = inf`.
    pub momentum_std_train: f64,
    /// `1 / sqrt(beta0)` used when acting.
    pub momentum_std_explore: f64,
    pub include_state_in_nets: bool,
    /// Start every chain at `rho0 = 0` while keeping `beta0` for the
    /// kinetic term.
    pub zero_initial_momentum: bool,
}

impl Default for LeapfrogConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            steps: 3,
            momentum_std_train: 1.0,
            momentum_std_explore: 1.0,
            include_state_in_nets: true,
            zero_initial_momentum: false,
        }
    }
}

impl LeapfrogConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("agent.leapfrog.step_size", "must be positive and finite"));
        }
        for (name, v) in [
            ("agent.leapfrog.momentum_std_train", self.momentum_std_train),
            ("agent.leapfrog.momentum_std_explore", self.momentum_std_explore),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn momentum_std(&self, mode: EvolveMode) -> f64 {
        match mode {
            EvolveMode::Train => self.momentum_std_train,
            EvolveMode::Explore => self.momentum_std_explore,
        }
    }

    /// Momentum precision `beta0`; infinite when the std is zero.
    pub fn beta0(&self, mode: EvolveMode) -> f64 {
        let s = self.momentum_std(mode);
        if s == 0.0 {
            f64::INFINITY
        } else {
            1.0 / (s * s)
        }
    }

    /// Std actually used for `rho0`.
    pub fn initial_momentum_std(&self, mode: EvolveMode) -> f64 {
        if self.zero_initial_momentum {
            0.0
        } else {
            self.momentum_std(mode)
        }
    }
}
