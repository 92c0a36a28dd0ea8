//! Squashed-Gaussian base policy `pi_theta(a | s)`.
//!
//! `a = tanh(u)`, `u ~ N(mean(s), std(s)^2)`, with the change-of-variables
//! correction `-sum log(1 - a^2 + 1e-6)` in the log-density. Sampling is
//! reparameterized (`u = mean + std * xi`), so the sampled action is
//! differentiable with respect to the network parameters.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::adcore::{Activation, BoundMlp, Mlp, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const SQUASH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq)]
pub struct BasePolicy {
    pub trunk: Mlp,
    pub mean_head: Mlp,
    pub log_std_head: Mlp,
}

/// Standard-normal noise of shape `[n, d]`.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize, d: usize) -> Tensor {
    let data = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(n, d, data).unwrap()
}

impl BasePolicy {
    /// One ReLU hidden layer of width `hidden`, linear mean and log-std heads.
    pub fn new<R: Rng + ?Sized>(state_dim: usize, action_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if action_dim == 0 {
            return Err(Error::InvalidArgument("action_dim must be >= 1".into()));
        }
        Ok(Self {
            trunk: Mlp::new(&[state_dim, hidden], Activation::Relu, Activation::Relu, rng)?,
            mean_head: Mlp::new(&[hidden, action_dim], Activation::Identity, Activation::Identity, rng)?,
            log_std_head: Mlp::new(&[hidden, action_dim], Activation::Identity, Activation::Identity, rng)?,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.mean_head.output_dim()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.trunk.params();
        p.extend(self.mean_head.params());
        p.extend(self.log_std_head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.trunk.params_mut();
        p.extend(self.mean_head.params_mut());
        p.extend(self.log_std_head.params_mut());
        p
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut p = self.trunk.named_params(&format!("{prefix}.trunk"));
        p.extend(self.mean_head.named_params(&format!("{prefix}.mean")));
        p.extend(self.log_std_head.named_params(&format!("{prefix}.log_std")));
        p
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundPolicy> {
        Ok(BoundPolicy {
            trunk: self.trunk.bind(tape, trainable)?,
            mean: self.mean_head.bind(tape, trainable)?,
            log_std: self.log_std_head.bind(tape, trainable)?,
        })
    }

    /// `(mean, clamped log-std)` for a batch of states.
    pub fn heads(&self, states: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false)?;
        let s = tape.constant(states.clone())?;
        let (m, ls) = p.heads(&mut tape, s)?;
        Ok((tape.value(m).clone(), tape.value(ls).clone()))
    }

    /// Deterministic action `tanh(mean(s))`.
    pub fn mean_action(&self, states: &Tensor) -> Result<Tensor> {
        Ok(self.heads(states)?.0.map(f64::tanh))
    }

    /// Draws `a0 ~ pi(. | s)` for each row; returns `(a0 [n, d], log_prob [n, 1])`.
    pub fn sample<R: Rng + ?Sized>(&self, states: &Tensor, rng: &mut R) -> Result<(Tensor, Tensor)> {
        let noise = standard_normal(rng, states.rows(), self.action_dim());
        self.sample_with_noise(states, &noise)
    }

    pub fn sample_with_noise(&self, states: &Tensor, noise: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false)?;
        let s = tape.constant(states.clone())?;
        let (a, lp) = p.sample(&mut tape, s, noise)?;
        Ok((tape.value(a).clone(), tape.value(lp).clone()))
    }

    /// Exact log-density of `actions` (each component strictly inside
    /// `(-1, 1)`), shape `[n, 1]`.
    pub fn log_prob(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false)?;
        let s = tape.constant(states.clone())?;
        let lp = p.log_prob(&mut tape, s, actions)?;
        Ok(tape.value(lp).clone())
    }
}

/// A [`BasePolicy`] placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundPolicy {
    trunk: BoundMlp,
    mean: BoundMlp,
    log_std: BoundMlp,
}

impl BoundPolicy {
    pub fn param_vars(&self) -> Vec<Var> {
        let mut v = self.trunk.param_vars();
        v.extend(self.mean.param_vars());
        v.extend(self.log_std.param_vars());
        v
    }

    pub fn heads(&self, tape: &mut Tape, s: Var) -> Result<(Var, Var)> {
        let h = self.trunk.forward(tape, s)?;
        let mean = self.mean.forward(tape, h)?;
        let raw = self.log_std.forward(tape, h)?;
        let log_std = tape.clamp(raw, LOG_STD_MIN, LOG_STD_MAX)?;
        Ok((mean, log_std))
    }

    pub fn mean_action(&self, tape: &mut Tape, s: Var) -> Result<Var> {
        let (mean, _) = self.heads(tape, s)?;
        tape.tanh(mean)
    }

    /// Reparameterized sample from fixed standard-normal `noise`.
    pub fn sample(&self, tape: &mut Tape, s: Var, noise: &Tensor) -> Result<(Var, Var)> {
        let (mean, log_std) = self.heads(tape, s)?;
        if tape.value(mean).shape() != noise.shape() {
            return Err(Error::shape(
                "BasePolicy::sample",
                format!("noise {:?} vs mean {:?}", noise.shape(), tape.value(mean).shape()),
            ));
        }
        let std = tape.exp(log_std)?;
        let xi = tape.constant(noise.clone())?;
        let scaled = tape.mul(std, xi)?;
        let u = tape.add(mean, scaled)?;
        let a = tape.tanh(u)?;

        // Gaussian part: (u - mean) / std == xi exactly.
        let base = tape.constant(noise.map(|x| -0.5 * x * x - HALF_LN_2PI))?;
        let gauss = tape.sub(base, log_std)?;
        let gauss = tape.sum_cols(gauss)?;
        let corr = squash_correction(tape, a)?;
        let log_prob = tape.sub(gauss, corr)?;
        Ok((a, log_prob))
    }

    pub fn log_prob(&self, tape: &mut Tape, s: Var, actions: &Tensor) -> Result<Var> {
        if let Some(bad) = actions.data().iter().find(|a| !(a.abs() < 1.0)) {
            return Err(Error::InvalidArgument(format!(
                "log_prob needs actions strictly inside (-1, 1), got {bad}"
            )));
        }
        let (mean, log_std) = self.heads(tape, s)?;
        if tape.value(mean).shape() != actions.shape() {
            return Err(Error::shape(
                "BasePolicy::log_prob",
                format!("actions {:?} vs mean {:?}", actions.shape(), tape.value(mean).shape()),
            ));
        }
        let u = tape.constant(actions.map(f64::atanh))?;
        let diff = tape.sub(u, mean)?;
        let neg_ls = tape.neg(log_std)?;
        let inv_std = tape.exp(neg_ls)?;
        let z = tape.mul(diff, inv_std)?;
        let z2 = tape.square(z)?;
        let quad = tape.scale(z2, -0.5)?;
        let gauss = tape.sub(quad, log_std)?;
        let gauss = tape.add_scalar(gauss, -HALF_LN_2PI)?;
        let gauss = tape.sum_cols(gauss)?;
        let a = tape.constant(actions.clone())?;
        let corr = squash_correction(tape, a)?;
        tape.sub(gauss, corr)
    }
}

/// `sum_j log(1 - a_j^2 + eps)`, shape `[n, 1]`.
fn squash_correction(tape: &mut Tape, a: Var) -> Result<Var> {
    let a2 = tape.square(a)?;
    let neg = tape.neg(a2)?;
    let inner = tape.add_scalar(neg, 1.0 + SQUASH_EPS)?;
    let logs = tape.ln(inner)?;
    tape.sum_cols(logs)
}
