use crate::adcore::{Tape, Tensor, Var};
use crate::envs::CostConvention;
use crate::error::{Error, Result};
use crate::hamiltonian::{ActionValue, BoundHamiltonian, EvolveMode, LyapunovFilter, SamplerKind, TapeEvolution};
use crate::hamiltonian::TargetPotential;
use crate::policy::BoundPolicy;

/// Reparameterized SAC actor loss `-mean(Q(s, a) - alpha * log pi(a|s))`.
/// Returns `(loss, log_prob)`.
pub fn sac_policy_loss<P: ActionValue + ?Sized>(
    tape: &mut Tape,
    policy: &BoundPolicy,
    q: &P,
    alpha: f64,
    states: Var,
    noise: &Tensor,
) -> Result<(Var, Var)> {
    let (a, log_prob) = policy.sample(tape, states, noise)?;
    let a = tape.clamp(a, -1.0, 1.0)?;
    let qv = q.value_on_tape(tape, states, a)?;
    let ent = tape.scale(log_prob, alpha)?;
    let obj = tape.sub(qv, ent)?;
    let m = tape.mean(obj)?;
    Ok((tape.neg(m)?, log_prob))
}

/// Hamiltonian actor loss
/// `-mean(Q(s, a_K) - alpha * log pi(a0|s) - (alpha * beta0 / 2) |rho_K|^2)`.
///
/// `target` supplies both `Q` (evaluated at `clip(a_K)`) and `alpha`. The
/// kinetic term uses the training precision and is dropped when it is
/// infinite, which together with zero steps gives the SAC loss exactly.
pub fn hpo_policy_loss<P: ActionValue + ?Sized>(
    tape: &mut Tape,
    policy: &BoundHamiltonian,
    target: &TargetPotential<'_, P>,
    sampler: SamplerKind,
    states: Var,
    policy_noise: &Tensor,
    momentum_noise: &Tensor,
) -> Result<(Var, TapeEvolution)> {
    let ev = policy.evolve(tape, target, sampler, states, policy_noise, momentum_noise, EvolveMode::Train)?;
    let alpha = target.alpha;
    let a = tape.clamp(ev.actions, -1.0, 1.0)?;
    let qv = target.q.value_on_tape(tape, states, a)?;
    let ent = tape.scale(ev.log_prob, alpha)?;
    let mut obj = tape.sub(qv, ent)?;
    let beta0 = policy.config().beta0(EvolveMode::Train);
    if beta0.is_finite() {
        let r2 = tape.square(ev.momentum)?;
        let r2 = tape.sum_cols(r2)?;
        let kin = tape.scale(r2, 0.5 * alpha * beta0)?;
        obj = tape.sub(obj, kin)?;
    }
    let m = tape.mean(obj)?;
    Ok((tape.neg(m)?, ev))
}

/// Projected ascent `max(0, lambda + eta * (j_c - d0))`.
pub fn lambda_update(lambda: f64, j_c: f64, d0: f64, eta: f64) -> f64 {
    (lambda + eta * (j_c - d0)).max(0.0)
}

/// `(1 - gamma) * (d0 - mean_s0 Q_C(s0, a_ref(s0)))`.
pub fn lyapunov_threshold<C: ActionValue + ?Sized>(
    cost: &C,
    initial_states: &Tensor,
    reference_actions: &Tensor,
    gamma: f64,
    d0: f64,
) -> Result<f64> {
    if initial_states.rows() == 0 {
        return Err(Error::InvalidArgument("need at least one initial state".into()));
    }
    let qc = cost.value(initial_states, reference_actions)?.mean();
    Ok((1.0 - gamma) * (d0 - qc))
}

/// `Q_C(s, a) - Q_C(s, a_ref) < threshold` for a single state.
pub fn lyapunov_check(
    cost: &dyn ActionValue,
    state: &Tensor,
    action: &Tensor,
    reference_action: &Tensor,
    threshold: f64,
) -> Result<bool> {
    let f = LyapunovFilter {
        cost,
        reference_actions: reference_action.clone(),
        threshold,
    };
    Ok(f.accepts(f.gaps(state, action)?.item()?))
}

/// Constraint statistic of one episode: discounted sum or per-step mean.
pub fn episode_cost_statistic(costs: &[f64], convention: CostConvention, gamma: f64) -> f64 {
    match convention {
        CostConvention::Discounted => costs.iter().rev().fold(0.0, |acc, c| c + gamma * acc),
        CostConvention::Average if costs.is_empty() => 0.0,
        CostConvention::Average => costs.iter().sum::<f64>() / costs.len() as f64,
    }
}
