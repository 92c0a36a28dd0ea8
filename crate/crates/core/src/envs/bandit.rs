use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clip_action, CostConvention, Env, EnvSpec, Transition};
use crate::error::{Error, Result};

/// One Gaussian bump of the reward surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditMode {
    pub center: Vec<f64>,
    pub height: f64,
    pub width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditParams {
    pub action_dim: usize,
    /// Seed for the generated modes; ignored when `modes` is given.
    pub mode_seed: u64,
    pub num_modes: usize,
    pub modes: Option<Vec<BanditMode>>,
    pub discount: f64,
}

impl Default for BanditParams {
    fn default() -> Self {
        Self {
            action_dim: 2,
            mode_seed: 7,
            num_modes: 3,
            modes: None,
            discount: 0.99,
        }
    }
}

/// Stateless one-step task with reward
/// `r(a) = sum_i h_i * exp(-|a - mu_i|^2 / (2 sigma_i^2))`.
///
/// The state is zero-dimensional. Each episode is a single terminal step.
#[derive(Clone, Debug)]
pub struct MultiModalBandit {
    spec: EnvSpec,
    modes: Vec<BanditMode>,
    done: bool,
}

impl MultiModalBandit {
    pub fn new(params: BanditParams) -> Result<Self> {
        if !(1..=2).contains(&params.action_dim) {
            return Err(Error::config("env.params.action_dim", "must be 1 or 2"));
        }
        let modes = match params.modes {
            Some(m) => m,
            None => generate_modes(params.action_dim, params.num_modes, params.mode_seed),
        };
        if modes.is_empty() {
            return Err(Error::config("env.params.modes", "need at least one mode"));
        }
        for (i, m) in modes.iter().enumerate() {
            if m.center.len() != params.action_dim {
                return Err(Error::config(
                    format!("env.params.modes[{i}].center"),
                    "length must equal action_dim",
                ));
            }
            if !(m.width > 0.0) || !m.height.is_finite() {
                return Err(Error::config(
                    format!("env.params.modes[{i}]"),
                    "width must be > 0 and height finite",
                ));
            }
        }
        Ok(Self {
            spec: EnvSpec {
                name: "multimodal_bandit".into(),
                state_dim: 0,
                action_dim: params.action_dim,
                max_episode_len: 1,
                has_cost: false,
                cost_bound: 0.0,
                cost_convention: CostConvention::Discounted,
                discount: params.discount,
            },
            modes,
            done: true,
        })
    }

    pub fn modes(&self) -> &[BanditMode] {
        &self.modes
    }

    pub fn reward(&self, a: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let d2: f64 = a.iter().zip(&m.center).map(|(x, c)| (x - c) * (x - c)).sum();
                m.height * (-d2 / (2.0 * m.width * m.width)).exp()
            })
            .sum()
    }

    /// Cell-centre grid over `[-1, 1]^d` with `resolution` points per axis.
    pub fn grid(&self, resolution: usize) -> Vec<Vec<f64>> {
        let h = 2.0 / resolution as f64;
        let axis: Vec<f64> = (0..resolution).map(|i| -1.0 + h * (i as f64 + 0.5)).collect();
        match self.spec.action_dim {
            1 => axis.iter().map(|&x| vec![x]).collect(),
            _ => axis
                .iter()
                .flat_map(|&x| axis.iter().map(move |&y| vec![x, y]))
                .collect(),
        }
    }

    /// Best grid action and its reward.
    pub fn grid_optimum(&self, resolution: usize) -> (Vec<f64>, f64) {
        self.grid(resolution)
            .into_iter()
            .map(|a| {
                let r = self.reward(&a);
                (a, r)
            })
            .fold((vec![], f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    /// Density `p(a) ∝ exp(r(a) / alpha)` on the grid, normalized so that
    /// `sum(p) * cell_volume == 1`. Returns `(points, density, cell_volume)`.
    pub fn target_density(&self, alpha: f64, resolution: usize) -> (Vec<Vec<f64>>, Vec<f64>, f64) {
        let pts = self.grid(resolution);
        let logits: Vec<f64> = pts.iter().map(|a| self.reward(a) / alpha).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let cell = (2.0 / resolution as f64).powi(self.spec.action_dim as i32);
        let z: f64 = w.iter().sum::<f64>() * cell;
        (pts, w.into_iter().map(|v| v / z).collect(), cell)
    }
}

fn generate_modes(dim: usize, count: usize, seed: u64) -> Vec<BanditMode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| BanditMode {
            center: (0..dim).map(|_| rng.random_range(-0.7..0.7)).collect(),
            height: rng.random_range(0.4..1.0),
            width: rng.random_range(0.15..0.3),
        })
        .collect()
}

impl Env for MultiModalBandit {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.done = false;
        Vec::new()
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        if self.done {
            return Err(Error::Env("step called on a finished episode; reset first".into()));
        }
        let a = clip_action(action, self.spec.action_dim)?;
        self.done = true;
        Ok(Transition {
            state: Vec::new(),
            reward: self.reward(&a),
            action: a,
            cost: 0.0,
            next_state: Vec::new(),
            done: true,
            terminal: true,
        })
    }
}
