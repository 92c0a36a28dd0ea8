//! Training logic for SAC and the Hamiltonian variants.

mod agent;
mod losses;

pub use agent::{ActOutcome, Agent, LagrangeState, Temperature, TrainMetrics};
pub use losses::{
    episode_cost_statistic, hpo_policy_loss, lambda_update, lyapunov_check, lyapunov_threshold, sac_policy_loss,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{LeapfrogConfig, SamplerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sac,
    SacHpo,
    SacLagrangian,
    SacHpoSafe,
}

impl Variant {
    pub fn uses_cost(self) -> bool {
        matches!(self, Variant::SacLagrangian | Variant::SacHpoSafe)
    }

    pub fn uses_leapfrog(self) -> bool {
        matches!(self, Variant::SacHpo | Variant::SacHpoSafe)
    }
}

/// Sampler wiring for the ablation study: which integrator is used when
/// acting and when training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Gated when acting and training.
    Hpo,
    /// Conventional when acting and training.
    ConvConv,
    /// Conventional when acting, plain Gaussian policy gradient when training.
    ConvGauss,
    /// Plain Gaussian when acting, gated when training.
    GaussGated,
    /// No leapfrog at all.
    Sac,
    /// Gated in both phases, every chain starts from zero momentum.
    NoMomentum,
}

impl AblationMode {
    pub const ALL: [AblationMode; 6] = [
        AblationMode::Hpo,
        AblationMode::ConvConv,
        AblationMode::ConvGauss,
        AblationMode::GaussGated,
        AblationMode::Sac,
        AblationMode::NoMomentum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Hpo => "hpo",
            AblationMode::ConvConv => "conv-conv",
            AblationMode::ConvGauss => "conv-gauss",
            AblationMode::GaussGated => "gauss-gated",
            AblationMode::Sac => "sac",
            AblationMode::NoMomentum => "no-momentum",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("mode", format!("unknown ablation mode `{s}`")))
    }

    /// `(explore, train)` samplers.
    pub fn samplers(self) -> (SamplerKind, SamplerKind) {
        use SamplerKind::*;
        match self {
            AblationMode::Hpo | AblationMode::NoMomentum => (Gated, Gated),
            AblationMode::ConvConv => (Conventional, Conventional),
            AblationMode::ConvGauss => (Conventional, None),
            AblationMode::GaussGated => (None, Gated),
            AblationMode::Sac => (None, None),
        }
    }

    /// Rewrites `cfg` to this mode. Safe variants keep their constraint
    /// handling; everything else becomes `sac` or `sac_hpo`.
    pub fn apply(self, cfg: &mut AgentConfig) {
        let (explore, train) = self.samplers();
        cfg.explore_sampler = explore;
        cfg.train_sampler = train;
        cfg.leapfrog.zero_initial_momentum = self == AblationMode::NoMomentum;
        cfg.variant = match (self, cfg.variant.uses_cost()) {
            (AblationMode::Sac, false) => Variant::Sac,
            (AblationMode::Sac, true) => Variant::SacLagrangian,
            (_, false) => Variant::SacHpo,
            (_, true) => Variant::SacHpoSafe,
        };
    }
}

/// Per-task hyperparameters for the Hamiltonian sampler.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Profile {
    pub name: &'static str,
    pub alpha: f64,
    /// `1 / sqrt(beta0)` for training.
    pub momentum_std_train: f64,
    /// `1 / sqrt(beta0)` for exploration.
    pub momentum_std_explore: f64,
    pub step_size: f64,
    pub steps: usize,
    pub net_hidden: usize,
}

#[rustfmt::skip]
pub const PROFILES: [Profile; 8] = [
    Profile { name: "half_cheetah", alpha: 0.2, momentum_std_train: 1.0, momentum_std_explore: 0.5, step_size: 0.2, steps: 3, net_hidden: 32 },
    Profile { name: "hopper", alpha: 0.2, momentum_std_train: 0.1, momentum_std_explore: 1.5, step_size: 0.15, steps: 2, net_hidden: 32 },
    Profile { name: "walker2d", alpha: 0.2, momentum_std_train: 0.2, momentum_std_explore: 1.5, step_size: 0.15, steps: 3, net_hidden: 32 },
    Profile { name: "ant", alpha: 0.2, momentum_std_train: 0.1, momentum_std_explore: 1.0, step_size: 0.1, steps: 3, net_hidden: 32 },
    Profile { name: "humanoid", alpha: 0.05, momentum_std_train: 1.0, momentum_std_explore: 1.0, step_size: 0.1, steps: 3, net_hidden: 64 },
    Profile { name: "humanoid_pybullet", alpha: 0.05, momentum_std_train: 0.4, momentum_std_explore: 1.5, step_size: 0.2, steps: 3, net_hidden: 64 },
    Profile { name: "flagrun", alpha: 0.05, momentum_std_train: 0.2, momentum_std_explore: 1.0, step_size: 0.15, steps: 3, net_hidden: 32 },
    Profile { name: "flagrun_harder", alpha: 0.05, momentum_std_train: 0.2, momentum_std_explore: 1.5, step_size: 0.15, steps: 3, net_hidden: 64 },
];

pub fn profile(name: &str) -> Option<&'static Profile> {
    PROFILES.iter().find(|p| p.name == name)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub variant: Variant,
    /// Named hyperparameter profile applied before explicit keys.
    pub profile: Option<String>,
    pub leapfrog: LeapfrogConfig,
    pub explore_sampler: SamplerKind,
    pub train_sampler: SamplerKind,
    pub policy_hidden: usize,
    pub critic_hidden: Vec<usize>,
    /// Hidden units of the gate and transform nets.
    pub net_hidden: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub alpha: f64,
    pub auto_alpha: bool,
    /// Entropy target for auto-tuning; defaults to `-action_dim`.
    pub target_entropy: Option<f64>,
    pub lambda_init: f64,
    pub lambda_lr: f64,
    /// Constraint bound; defaults to the environment's.
    pub cost_bound: Option<f64>,
    /// Completed episodes averaged into the constraint statistic.
    pub cost_window: usize,
    /// Step cap of the Lyapunov-filtered sampler.
    pub safe_max_steps: usize,
    /// Episode-initial states kept for the Lyapunov threshold.
    pub initial_state_window: usize,
    pub warmup_steps: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::SacHpo,
            profile: None,
            leapfrog: LeapfrogConfig::default(),
            explore_sampler: SamplerKind::Gated,
            train_sampler: SamplerKind::Gated,
            policy_hidden: 256,
            critic_hidden: vec![256, 256],
            net_hidden: 32,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            alpha: 0.2,
            auto_alpha: false,
            target_entropy: None,
            lambda_init: 0.0,
            lambda_lr: 0.1,
            cost_bound: None,
            cost_window: 10,
            safe_max_steps: 10,
            initial_state_window: 100,
            warmup_steps: 1000,
        }
    }
}

impl AgentConfig {
    /// Defaults with a named profile's values filled in.
    pub fn with_profile(name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_profile(name)?;
        Ok(cfg)
    }

    pub fn apply_profile(&mut self, name: &str) -> Result<()> {
        let p = profile(name).ok_or_else(|| {
            let known: Vec<_> = PROFILES.iter().map(|p| p.name).collect();
            Error::config("agent.profile", format!("unknown profile `{name}` (known: {})", known.join(", ")))
        })?;
        self.profile = Some(name.to_owned());
        self.alpha = p.alpha;
        self.leapfrog.momentum_std_train = p.momentum_std_train;
        self.leapfrog.momentum_std_explore = p.momentum_std_explore;
        self.leapfrog.step_size = p.step_size;
        self.leapfrog.steps = p.steps;
        self.net_hidden = p.net_hidden;
        Ok(())
    }

    /// Samplers actually used, after accounting for the variant.
    pub fn effective_samplers(&self) -> (SamplerKind, SamplerKind) {
        if self.variant.uses_leapfrog() {
            (self.explore_sampler, self.train_sampler)
        } else {
            (SamplerKind::None, SamplerKind::None)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.leapfrog.validate()?;
        let positive = [
            ("agent.gamma", self.gamma),
            ("agent.tau", self.tau),
            ("agent.alpha", self.alpha),
            ("agent.lambda_lr", self.lambda_lr),
        ];
        for (path, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(path, "must be positive and finite"));
            }
        }
        if self.gamma > 1.0 {
            return Err(Error::config("agent.gamma", "must be <= 1"));
        }
        if self.tau > 1.0 {
            return Err(Error::config("agent.tau", "must be <= 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("agent.lr", "must be finite and >= 0"));
        }
        if !(self.lambda_init >= 0.0 && self.lambda_init.is_finite()) {
            return Err(Error::config("agent.lambda_init", "must be finite and >= 0"));
        }
        for (path, v) in [
            ("agent.policy_hidden", self.policy_hidden),
            ("agent.net_hidden", self.net_hidden),
            ("agent.batch_size", self.batch_size),
            ("agent.buffer_capacity", self.buffer_capacity),
            ("agent.cost_window", self.cost_window),
            ("agent.initial_state_window", self.initial_state_window),
            ("agent.safe_max_steps", self.safe_max_steps),
        ] {
            if v == 0 {
                return Err(Error::config(path, "must be positive"));
            }
        }
        if self.critic_hidden.is_empty() || self.critic_hidden.contains(&0) {
            return Err(Error::config("agent.critic_hidden", "need at least one positive layer width"));
        }
        if self.batch_size > self.buffer_capacity {
            return Err(Error::config("agent.batch_size", "exceeds buffer_capacity"));
        }
        if let Some(p) = &self.profile {
            if profile(p).is_none() {
                return Err(Error::config("agent.profile", format!("unknown profile `{p}`")));
            }
        }
        Ok(())
    }
}
