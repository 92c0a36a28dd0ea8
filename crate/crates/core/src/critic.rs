//! Twin Q networks with Polyak-averaged target copies.
//!
//! The same structure serves the return critic `Q` (reduced with `min` over
//! the twins) and the safety-cost critic `Q_C` (reduced with `max`, and
//! floored at zero when building targets, since costs are nonnegative).

use rand::Rng;

use crate::adcore::{global_norm, Activation, AdamState, Mlp, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Online,
    Target,
}

/// How the two twin estimates are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Min,
    Max,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticPair {
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub tau: f64,
    pub reduce: Reduce,
    state_dim: usize,
}

impl CriticPair {
    /// Twin ReLU networks on `state || action`, targets initialized as copies.
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        tau: f64,
        reduce: Reduce,
        rng: &mut R,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidArgument(format!("tau must lie in (0, 1], got {tau}")));
        }
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q1 = Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng)?;
        let q2 = Mlp::new(&sizes, Activation::Relu, Activation::Identity, rng)?;
        Ok(Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            tau,
            reduce,
            state_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn nets(&self, head: Head) -> (&Mlp, &Mlp) {
        match head {
            Head::Online => (&self.q1, &self.q2),
            Head::Target => (&self.q1_target, &self.q2_target),
        }
    }

    /// Both twin estimates, each `[n, 1]`.
    pub fn q_values(&self, states: &Tensor, actions: &Tensor, head: Head) -> Result<(Tensor, Tensor)> {
        let x = Tensor::concat_cols(&[states, actions])?;
        let (a, b) = self.nets(head);
        Ok((a.forward(&x)?, b.forward(&x)?))
    }

    /// Elementwise `min(q1, q2)`.
    pub fn q_min(&self, states: &Tensor, actions: &Tensor, head: Head) -> Result<Tensor> {
        let (a, b) = self.q_values(states, actions, head)?;
        a.zip_map(&b, "q_min", f64::min)
    }

    /// Twin estimates reduced according to [`CriticPair::reduce`].
    pub fn estimate(&self, states: &Tensor, actions: &Tensor, head: Head) -> Result<Tensor> {
        let (a, b) = self.q_values(states, actions, head)?;
        match self.reduce {
            Reduce::Min => a.zip_map(&b, "estimate", f64::min),
            Reduce::Max => a.zip_map(&b, "estimate", f64::max),
        }
    }

    /// Reduced estimate recorded on `tape` with the critic parameters held
    /// constant, so gradients reach only `states`/`actions`.
    pub fn estimate_on_tape(&self, tape: &mut Tape, s: Var, a: Var, head: Head) -> Result<Var> {
        let (n1, n2) = self.nets(head);
        let b1 = n1.bind(tape, false)?;
        let b2 = n2.bind(tape, false)?;
        let x = tape.concat_cols(&[s, a])?;
        let y1 = b1.forward(tape, x)?;
        let y2 = b2.forward(tape, x)?;
        match self.reduce {
            Reduce::Min => tape.minimum(y1, y2),
            Reduce::Max => tape.maximum(y1, y2),
        }
    }

    /// `target <- (1 - tau) * target + tau * online`.
    pub fn polyak_update(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidArgument(format!("tau must lie in (0, 1], got {tau}")));
        }
        self.q1_target.blend_from(&self.q1, tau)?;
        self.q2_target.blend_from(&self.q2, tau)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.q1.params();
        p.extend(self.q2.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.q1.params_mut();
        p.extend(self.q2.params_mut());
        p
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut p = self.q1.named_params(&format!("{prefix}.q1"));
        p.extend(self.q2.named_params(&format!("{prefix}.q2")));
        p.extend(self.q1_target.named_params(&format!("{prefix}.q1_target")));
        p.extend(self.q2_target.named_params(&format!("{prefix}.q2_target")));
        p
    }

    /// Online and target parameters in [`CriticPair::named_params`] order.
    pub fn all_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.q1.params_mut();
        p.extend(self.q2.params_mut());
        p.extend(self.q1_target.params_mut());
        p.extend(self.q2_target.params_mut());
        p
    }

    /// Twin regression loss `(mse(q1, y) + mse(q2, y)) / 2` and its gradient
    /// with respect to the online parameters, in [`CriticPair::params`] order.
    pub fn loss_and_grads(&self, states: &Tensor, actions: &Tensor, targets: &Tensor) -> Result<(f64, Vec<Tensor>)> {
        if targets.shape() != [states.rows(), 1] {
            return Err(Error::shape(
                "critic_loss",
                format!("targets {:?} for {} rows", targets.shape(), states.rows()),
            ));
        }
        let mut tape = Tape::new();
        let b1 = self.q1.bind(&mut tape, true)?;
        let b2 = self.q2.bind(&mut tape, true)?;
        let x = tape.constant(Tensor::concat_cols(&[states, actions])?)?;
        let y = tape.constant(targets.clone())?;
        let mut total = None;
        for b in [&b1, &b2] {
            let q = b.forward(&mut tape, x)?;
            let d = tape.sub(q, y)?;
            let d2 = tape.square(d)?;
            let mse = tape.mean(d2)?;
            total = Some(match total {
                None => mse,
                Some(t) => tape.add(t, mse)?,
            });
        }
        let loss = tape.scale(total.unwrap(), 0.5)?;
        let value = tape.value(loss).item()?;
        let vars: Vec<Var> = b1.param_vars().into_iter().chain(b2.param_vars()).collect();
        let mut grads = tape.backward(loss)?;
        let g = vars
            .iter()
            .zip(self.params())
            .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros_like(p)))
            .collect();
        Ok((value, g))
    }

    /// One Adam step on the twin regression loss. Returns `(loss, grad_norm)`.
    pub fn fit(&mut self, adam: &mut AdamState, states: &Tensor, actions: &Tensor, targets: &Tensor) -> Result<(f64, f64)> {
        let (loss, grads) = self.loss_and_grads(states, actions, targets)?;
        let norm = global_norm(&grads);
        adam.step(&mut self.params_mut(), &grads)?;
        Ok((loss, norm))
    }
}

/// Mean of `(mse(q1, y) + mse(q2, y)) / 2` without gradients.
pub fn critic_loss(critics: &CriticPair, states: &Tensor, actions: &Tensor, targets: &Tensor) -> Result<f64> {
    let (q1, q2) = critics.q_values(states, actions, Head::Online)?;
    let mse = |q: &Tensor| -> Result<f64> { Ok(q.sub(targets)?.map(|d| d * d).mean()) };
    Ok(0.5 * (mse(&q1)? + mse(&q2)?))
}

/// Soft backup `r + gamma * (1 - terminal) * (q_next - alpha * log_prob_next)`.
///
/// All inputs are `[n, 1]`. `q_next` is the target critic at the next
/// action produced by the acting policy; `log_prob_next` is the base-policy
/// log-density of that action's initial sample.
pub fn bellman_target(
    rewards: &Tensor,
    terminals: &Tensor,
    q_next: &Tensor,
    log_prob_next: &Tensor,
    alpha: f64,
    gamma: f64,
) -> Result<Tensor> {
    let soft = q_next.zip_map(log_prob_next, "bellman_target", |q, lp| q - alpha * lp)?;
    let boot = soft.zip_map(terminals, "bellman_target", |v, t| gamma * (1.0 - t) * v)?;
    rewards.add(&boot)?.ensure_finite("bellman_target")
}

/// Cost backup `c + gamma * (1 - terminal) * max(qc_next, 0)`.
pub fn cost_bellman_target(costs: &Tensor, terminals: &Tensor, qc_next: &Tensor, gamma: f64) -> Result<Tensor> {
    let boot = qc_next.zip_map(terminals, "cost_bellman_target", |q, t| gamma * (1.0 - t) * q.max(0.0))?;
    costs.add(&boot)?.ensure_finite("cost_bellman_target")
}
