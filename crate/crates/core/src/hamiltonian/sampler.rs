use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::leapfrog::{gated_drift, normalized_neg_grad, BoundGatedNets, GatedLeapfrogNets};
use super::potential::{ActionValue, TargetPotential};
use super::{EvolveMode, LeapfrogConfig, PhasePoint, SamplerKind};
use crate::adcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::policy::{standard_normal, BasePolicy, BoundPolicy};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Independent random streams for the base-policy noise and the momentum.
#[derive(Clone, Debug)]
pub struct SamplingRng {
    pub policy: ChaCha8Rng,
    pub momentum: ChaCha8Rng,
}

impl SamplingRng {
    pub fn new(policy: ChaCha8Rng, momentum: ChaCha8Rng) -> Self {
        Self { policy, momentum }
    }

    pub fn from_seed(seed: u64) -> Self {
        let mut policy = ChaCha8Rng::seed_from_u64(seed);
        policy.set_stream(1);
        let mut momentum = ChaCha8Rng::seed_from_u64(seed);
        momentum.set_stream(2);
        Self { policy, momentum }
    }
}

/// Output of a sampling pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Evolved {
    /// `a_K`, not clipped.
    pub actions: Tensor,
    pub momentum: Tensor,
    pub initial_actions: Tensor,
    pub initial_momentum: Tensor,
    /// `log pi(a0 | s)`, `[n, 1]`.
    pub log_prob: Tensor,
}

/// Tape handles for a differentiable sampling pass.
#[derive(Clone, Copy, Debug)]
pub struct TapeEvolution {
    pub actions: Var,
    pub momentum: Var,
    pub initial_actions: Var,
    pub log_prob: Var,
}

/// Per-row bookkeeping of the Lyapunov-filtered sampler.
#[derive(Clone, Debug, PartialEq)]
pub struct SafeOutcome {
    pub steps_used: usize,
    /// Candidates that failed the check and were stepped past.
    pub violations_discarded: usize,
    /// The returned action passed the check (false only on exhaustion).
    pub accepted: bool,
    /// `Q_C(s, a) - Q_C(s, a_ref)` of the returned action.
    pub cost_gap: f64,
}

/// Accepts `a` at `s` iff `Q_C(s, clip(a)) - Q_C(s, a_ref) < threshold`.
pub struct LyapunovFilter<'a> {
    pub cost: &'a dyn ActionValue,
    /// Reference-policy action per state row.
    pub reference_actions: Tensor,
    pub threshold: f64,
}

impl LyapunovFilter<'_> {
    /// Cost gaps per row.
    pub fn gaps(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let clipped = actions.map(|a| a.clamp(-1.0, 1.0));
        let qc = self.cost.value(states, &clipped)?;
        let qref = self.cost.value(states, &self.reference_actions)?;
        qc.sub(&qref)?.ensure_finite("lyapunov gap")
    }

    pub fn accepts(&self, gap: f64) -> bool {
        gap < self.threshold
    }
}

/// `log N(rho; 0, I / beta0)` per row.
pub fn momentum_log_density(momentum: &Tensor, beta0: f64) -> Result<Tensor> {
    if !(beta0 > 0.0 && beta0.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "momentum density needs finite positive beta0, got {beta0}"
        )));
    }
    let c = 0.5 * beta0.ln() - HALF_LN_2PI;
    Ok(momentum.map(|r| c - 0.5 * beta0 * r * r).sum_cols())
}

/// `log pi(a0 | s) + log N(rho0; 0, I / beta0)`, which by the unit Jacobian
/// of the leapfrog map is also the log-density of the evolved point.
pub fn joint_log_density(
    policy: &BasePolicy,
    beta0: f64,
    states: &Tensor,
    initial_actions: &Tensor,
    initial_momentum: &Tensor,
) -> Result<Tensor> {
    policy
        .log_prob(states, initial_actions)?
        .add(&momentum_log_density(initial_momentum, beta0)?)
}

type Drift<'b> = Box<dyn FnMut(&Tensor) -> Result<Tensor> + 'b>;

/// Base policy, gated-integrator nets and integrator settings.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianPolicy {
    pub base: BasePolicy,
    pub nets: GatedLeapfrogNets,
    pub config: LeapfrogConfig,
}

impl HamiltonianPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        policy_hidden: usize,
        net_hidden: usize,
        config: LeapfrogConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let base = BasePolicy::new(state_dim, action_dim, policy_hidden, rng)?;
        let nets = GatedLeapfrogNets::new(state_dim, action_dim, net_hidden, config.include_state_in_nets, rng)?;
        Ok(Self { base, nets, config })
    }

    pub fn action_dim(&self) -> usize {
        self.base.action_dim()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.base.params();
        p.extend(self.nets.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.base.params_mut();
        p.extend(self.nets.params_mut());
        p
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut p = self.base.named_params(&format!("{prefix}.base"));
        p.extend(self.nets.named_params(&format!("{prefix}.nets")));
        p
    }

    fn drift<'b, P: ActionValue + ?Sized>(
        &'b self,
        target: &'b TargetPotential<'b, P>,
        sampler: SamplerKind,
        states: &'b Tensor,
    ) -> Option<Drift<'b>> {
        match sampler {
            SamplerKind::None => None,
            SamplerKind::Conventional => Some(Box::new(move |a: &Tensor| target.scaled_grad(states, a))),
            SamplerKind::Gated => Some(Box::new(move |a: &Tensor| gated_drift(target.q, &self.nets, states, a))),
        }
    }

    /// Runs the configured number of steps from a given starting point.
    pub fn evolve_from<P: ActionValue + ?Sized>(
        &self,
        target: &TargetPotential<'_, P>,
        sampler: SamplerKind,
        states: &Tensor,
        start: PhasePoint,
    ) -> Result<PhasePoint> {
        let Some(mut drift) = self.drift(target, sampler, states) else {
            return Ok(start);
        };
        let eps = self.config.step_size;
        let PhasePoint {
            action: mut a,
            momentum: mut rho,
        } = start;
        if self.config.steps == 0 {
            return PhasePoint::new(a, rho);
        }
        // the drift at the end of one step is the drift at the start of the next
        let mut f = drift(&a)?;
        for _ in 0..self.config.steps {
            rho.axpy(0.5 * eps, &f)?;
            a.axpy(eps, &rho)?;
            f = drift(&a)?;
            rho.axpy(0.5 * eps, &f)?;
        }
        PhasePoint::new(a, rho)
    }

    fn initial_momentum<R: Rng + ?Sized>(&self, n: usize, mode: EvolveMode, rng: &mut R) -> Tensor {
        let noise = standard_normal(rng, n, self.action_dim());
        noise.scale(self.config.initial_momentum_std(mode))
    }

    /// Samples `a0` and `rho0` and evolves them.
    pub fn evolve<P: ActionValue + ?Sized>(
        &self,
        target: &TargetPotential<'_, P>,
        sampler: SamplerKind,
        states: &Tensor,
        rng: &mut SamplingRng,
        mode: EvolveMode,
    ) -> Result<Evolved> {
        let (a0, log_prob) = self.base.sample(states, &mut rng.policy)?;
        let rho0 = self.initial_momentum(states.rows(), mode, &mut rng.momentum);
        let end = self.evolve_from(target, sampler, states, PhasePoint::new(a0.clone(), rho0.clone())?)?;
        Ok(Evolved {
            actions: end.action,
            momentum: end.momentum,
            initial_actions: a0,
            initial_momentum: rho0,
            log_prob,
        })
    }

    /// Deterministic action: `tanh(mean)` evolved from zero momentum.
    pub fn evaluation_action<P: ActionValue + ?Sized>(
        &self,
        target: &TargetPotential<'_, P>,
        sampler: SamplerKind,
        states: &Tensor,
    ) -> Result<Tensor> {
        let a0 = self.base.mean_action(states)?;
        let rho0 = Tensor::zeros_like(&a0);
        Ok(self.evolve_from(target, sampler, states, PhasePoint::new(a0, rho0)?)?.action)
    }

    /// Exploration with a per-step Lyapunov check.
    ///
    /// After each step the candidate is checked; the first one that passes is
    /// returned. Every failed check adds fresh `N(0, I / beta0)` noise to the
    /// momentum. If all `max_steps` candidates fail, the last one is returned.
    pub fn safe_evolve<P: ActionValue + ?Sized>(
        &self,
        target: &TargetPotential<'_, P>,
        sampler: SamplerKind,
        states: &Tensor,
        filter: &LyapunovFilter<'_>,
        max_steps: usize,
        rng: &mut SamplingRng,
    ) -> Result<(Evolved, Vec<SafeOutcome>)> {
        let n = states.rows();
        if filter.reference_actions.shape() != [n, self.action_dim()] {
            return Err(Error::shape(
                "safe_evolve",
                format!("reference actions {:?} for {n} states", filter.reference_actions.shape()),
            ));
        }
        let (a0, log_prob) = self.base.sample(states, &mut rng.policy)?;
        let rho0 = self.initial_momentum(n, EvolveMode::Explore, &mut rng.momentum);
        let noise_std = self.config.momentum_std(EvolveMode::Explore);
        let eps = self.config.step_size;
        let d = self.action_dim();

        let mut actions = Vec::with_capacity(n * d);
        let mut momenta = Vec::with_capacity(n * d);
        let mut outcomes = Vec::with_capacity(n);
        for i in 0..n {
            let s = states.slice_rows(i, i + 1);
            let row_filter = LyapunovFilter {
                cost: filter.cost,
                reference_actions: filter.reference_actions.slice_rows(i, i + 1),
                threshold: filter.threshold,
            };
            let mut a = a0.slice_rows(i, i + 1);
            let mut rho = rho0.slice_rows(i, i + 1);
            let mut outcome = SafeOutcome {
                steps_used: 0,
                violations_discarded: 0,
                accepted: false,
                cost_gap: row_filter.gaps(&s, &a)?.item()?,
            };
            outcome.accepted = row_filter.accepts(outcome.cost_gap);

            if let Some(mut drift) = self.drift(target, sampler, &s) {
                let mut f = drift(&a)?;
                for k in 1..=max_steps {
                    rho.axpy(0.5 * eps, &f)?;
                    a.axpy(eps, &rho)?;
                    f = drift(&a)?;
                    rho.axpy(0.5 * eps, &f)?;
                    let gap = row_filter.gaps(&s, &a)?.item()?;
                    outcome.steps_used = k;
                    outcome.cost_gap = gap;
                    outcome.accepted = row_filter.accepts(gap);
                    if outcome.accepted {
                        break;
                    }
                    if k < max_steps {
                        outcome.violations_discarded += 1;
                    }
                    let kick = standard_normal(&mut rng.momentum, 1, d).scale(noise_std);
                    rho = rho.add(&kick)?;
                }
            }
            actions.extend_from_slice(a.data());
            momenta.extend_from_slice(rho.data());
            outcomes.push(outcome);
        }
        let evolved = Evolved {
            actions: Tensor::matrix(n, d, actions)?.ensure_finite("safe_evolve")?,
            momentum: Tensor::matrix(n, d, momenta)?,
            initial_actions: a0,
            initial_momentum: rho0,
            log_prob,
        };
        Ok((evolved, outcomes))
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundHamiltonian> {
        Ok(BoundHamiltonian {
            policy: self.base.bind(tape, trainable)?,
            nets: self.nets.bind(tape, trainable)?,
            config: self.config.clone(),
        })
    }
}

/// [`HamiltonianPolicy`] placed on a tape for training.
#[derive(Clone, Debug)]
pub struct BoundHamiltonian {
    pub policy: BoundPolicy,
    pub nets: BoundGatedNets,
    config: LeapfrogConfig,
}

impl BoundHamiltonian {
    pub fn config(&self) -> &LeapfrogConfig {
        &self.config
    }

    /// Parameter handles in [`HamiltonianPolicy::params`] order.
    pub fn param_vars(&self) -> Vec<Var> {
        let mut v = self.policy.param_vars();
        v.extend(self.nets.param_vars());
        v
    }

    /// Differentiable sampling pass from fixed standard-normal noise.
    ///
    /// Gradients reach the policy and gate/transform parameters through `a0`
    /// and through the nets' action input. The gradient direction `g` and the
    /// conventional drift `grad Q / alpha` enter as constants.
    #[allow(clippy::too_many_arguments)]
    pub fn evolve<P: ActionValue + ?Sized>(
        &self,
        tape: &mut Tape,
        target: &TargetPotential<'_, P>,
        sampler: SamplerKind,
        states: Var,
        policy_noise: &Tensor,
        momentum_noise: &Tensor,
        mode: EvolveMode,
    ) -> Result<TapeEvolution> {
        let (a0, log_prob) = self.policy.sample(tape, states, policy_noise)?;
        if momentum_noise.shape() != tape.value(a0).shape() {
            return Err(Error::shape(
                "BoundHamiltonian::evolve",
                format!("momentum noise {:?} vs actions {:?}", momentum_noise.shape(), tape.value(a0).shape()),
            ));
        }
        let rho0 = tape.constant(momentum_noise.scale(self.config.initial_momentum_std(mode)))?;
        let mut a = a0;
        let mut rho = rho0;
        if sampler != SamplerKind::None && self.config.steps > 0 {
            let s_val = tape.value(states).clone();
            let eps = self.config.step_size;
            let mut f = self.drift(tape, target, sampler, &s_val, states, a)?;
            for _ in 0..self.config.steps {
                let half = tape.scale(f, 0.5 * eps)?;
                rho = tape.add(rho, half)?;
                let step = tape.scale(rho, eps)?;
                a = tape.add(a, step)?;
                f = self.drift(tape, target, sampler, &s_val, states, a)?;
                let half = tape.scale(f, 0.5 * eps)?;
                rho = tape.add(rho, half)?;
            }
        }
        Ok(TapeEvolution {
            actions: a,
            momentum: rho,
            initial_actions: a0,
            log_prob,
        })
    }

    fn drift<P: ActionValue + ?Sized>(
        &self,
        tape: &mut Tape,
        target: &TargetPotential<'_, P>,
        sampler: SamplerKind,
        s_val: &Tensor,
        s: Var,
        a: Var,
    ) -> Result<Var> {
        let a_val = tape.value(a).clone();
        match sampler {
            SamplerKind::Conventional => tape.constant(target.scaled_grad(s_val, &a_val)?),
            SamplerKind::Gated => {
                let g = normalized_neg_grad(target.q, s_val, &a_val)?;
                self.nets.drift(tape, s, a, &g)
            }
            SamplerKind::None => unreachable!("no drift without an integrator"),
        }
    }
}
