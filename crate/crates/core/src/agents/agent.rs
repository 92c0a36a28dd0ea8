use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::{hpo_policy_loss, lambda_update, lyapunov_threshold, sac_policy_loss};
use super::{AgentConfig, Variant};
use crate::adcore::{global_norm, AdamConfig, AdamState, Checkpoint, Tape, Tensor};
use crate::critic::{bellman_target, cost_bellman_target, CriticPair, Head, Reduce};
use crate::envs::{CostConvention, EnvSpec};
use crate::error::{Error, Result};
use crate::hamiltonian::{
    ActionValue, CriticView, EvolveMode, HamiltonianPolicy, LyapunovFilter, PenalizedView, SafeOutcome,
    SamplingRng, TargetPotential,
};
use crate::policy::{standard_normal, BasePolicy};
use crate::replay::{Batch, ReplayBuffer};

/// Entropy temperature, either fixed or tuned toward a target entropy.
#[derive(Clone, Debug)]
pub struct Temperature {
    log_alpha: Tensor,
    pub auto: bool,
    pub target_entropy: f64,
    opt: AdamState,
}

impl Temperature {
    pub fn new(alpha: f64, auto: bool, target_entropy: f64, lr: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        let log_alpha = Tensor::scalar(alpha.ln());
        let opt = AdamState::new(AdamConfig::with_lr(lr), [&log_alpha]);
        Ok(Self {
            log_alpha,
            auto,
            target_entropy,
            opt,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.data()[0].exp()
    }

    /// One Adam step on `E[-log(alpha) * (log_prob + target_entropy)]`.
    /// Returns the loss value; a no-op (loss still reported) when not tuning.
    pub fn update(&mut self, log_probs: &Tensor) -> Result<f64> {
        let gap = log_probs.mean() + self.target_entropy;
        let loss = -self.log_alpha.data()[0] * gap;
        if self.auto {
            let grad = Tensor::scalar(-gap);
            self.opt.step(&mut [&mut self.log_alpha], &[grad])?;
        }
        Ok(loss)
    }
}

/// Lagrange multiplier with a moving window of episode cost statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangeState {
    pub lambda: f64,
    pub eta: f64,
    pub cost_bound: f64,
    window: usize,
    recent: VecDeque<f64>,
}

impl LagrangeState {
    pub fn new(lambda: f64, eta: f64, cost_bound: f64, window: usize) -> Self {
        Self {
            lambda: lambda.max(0.0),
            eta,
            cost_bound,
            window: window.max(1),
            recent: VecDeque::new(),
        }
    }

    /// Mean statistic over the recent episodes.
    pub fn cost_estimate(&self) -> Option<f64> {
        if self.recent.is_empty() {
            None
        } else {
            Some(self.recent.iter().sum::<f64>() / self.recent.len() as f64)
        }
    }

    /// Records a finished episode and takes one multiplier step.
    pub fn record_episode(&mut self, statistic: f64) -> f64 {
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(statistic);
        let j = self.cost_estimate().unwrap_or(statistic);
        self.lambda = lambda_update(self.lambda, j, self.cost_bound, self.eta);
        self.lambda
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub critic_loss: f64,
    pub cost_critic_loss: f64,
    pub policy_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub critic_grad_norm: f64,
    pub policy_grad_norm: f64,
    /// Batch mean of `log pi(a0 | s)`; its negative estimates the entropy.
    pub mean_log_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActOutcome {
    /// Action to apply (unclipped; environments clip).
    pub action: Vec<f64>,
    /// Initial base-policy sample (equal to `action` without leapfrog).
    pub initial_action: Vec<f64>,
    /// Present when the Lyapunov-filtered sampler was used.
    pub safe: Option<SafeOutcome>,
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AgentMeta {
    config: AgentConfig,
    env_name: String,
    state_dim: usize,
    action_dim: usize,
    max_episode_len: usize,
    has_cost: bool,
    cost_bound: f64,
    cost_convention: CostConvention,
    discount: f64,
}

pub struct Agent {
    pub config: AgentConfig,
    pub spec: EnvSpec,
    pub policy: HamiltonianPolicy,
    pub critics: CriticPair,
    pub cost_critics: Option<CriticPair>,
    /// Base-policy snapshot taken before the latest policy update.
    pub reference: Option<BasePolicy>,
    pub temperature: Temperature,
    pub lagrange: LagrangeState,
    policy_opt: AdamState,
    critic_opt: AdamState,
    cost_opt: Option<AdamState>,
    initial_states: VecDeque<Vec<f64>>,
    pub updates: u64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, spec: &EnvSpec, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if config.variant.uses_cost() && !spec.has_cost {
            return Err(Error::config(
                "agent.variant",
                format!("`{:?}` needs an environment with costs; `{}` has none", config.variant, spec.name),
            ));
        }
        let (s, d) = (spec.state_dim, spec.action_dim);
        let policy = HamiltonianPolicy::new(s, d, config.policy_hidden, config.net_hidden, config.leapfrog.clone(), rng)?;
        let critics = CriticPair::new(s, d, &config.critic_hidden, config.tau, Reduce::Min, rng)?;
        let cost_critics = if config.variant.uses_cost() {
            Some(CriticPair::new(s, d, &config.critic_hidden, config.tau, Reduce::Max, rng)?)
        } else {
            None
        };
        let adam = AdamConfig::with_lr(config.lr);
        let policy_opt = AdamState::new(adam, policy.params());
        let critic_opt = AdamState::new(adam, critics.params());
        let cost_opt = cost_critics.as_ref().map(|c| AdamState::new(adam, c.params()));
        let target_entropy = config.target_entropy.unwrap_or(-(d as f64));
        let temperature = Temperature::new(config.alpha, config.auto_alpha, target_entropy, config.lr)?;
        let d0 = config.cost_bound.unwrap_or(spec.cost_bound);
        let lagrange = LagrangeState::new(config.lambda_init, config.lambda_lr, d0, config.cost_window);
        Ok(Self {
            config,
            spec: spec.clone(),
            policy,
            critics,
            cost_critics,
            reference: None,
            temperature,
            lagrange,
            policy_opt,
            critic_opt,
            cost_opt,
            initial_states: VecDeque::new(),
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.temperature.alpha()
    }

    /// Penalized reward critic `Q - lambda * Q_C` (plain `Q` without costs).
    pub fn potential(&self, head: Head) -> Box<dyn ActionValue + '_> {
        match &self.cost_critics {
            Some(cost) => Box::new(PenalizedView {
                reward: &self.critics,
                cost,
                lambda: self.lagrange.lambda,
                head,
            }),
            None => Box::new(CriticView::new(&self.critics, head)),
        }
    }

    /// Remembers an episode-initial state for the Lyapunov threshold.
    pub fn observe_initial_state(&mut self, state: &[f64]) {
        if self.initial_states.len() == self.config.initial_state_window {
            self.initial_states.pop_front();
        }
        self.initial_states.push_back(state.to_vec());
    }

    /// Feeds a finished episode's costs to the multiplier (cost variants only).
    pub fn end_episode(&mut self, costs: &[f64]) {
        if self.config.variant.uses_cost() {
            let stat = super::episode_cost_statistic(costs, self.spec.cost_convention, self.spec.discount);
            self.lagrange.record_episode(stat);
        }
    }

    fn reference_actions(&self, states: &Tensor) -> Result<Tensor> {
        self.reference.as_ref().unwrap_or(&self.policy.base).mean_action(states)
    }

    /// Current Lyapunov threshold; `fallback` stands in for the initial
    /// states when none have been observed yet.
    pub fn lyapunov_threshold(&self, fallback: &[f64]) -> Result<f64> {
        let cost = self
            .cost_critics
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("agent has no cost critic".into()))?;
        let rows: Vec<Vec<f64>> = if self.initial_states.is_empty() {
            vec![fallback.to_vec()]
        } else {
            self.initial_states.iter().cloned().collect()
        };
        let s0 = if self.spec.state_dim == 0 {
            Tensor::zeros(rows.len(), 0)
        } else {
            Tensor::from_rows(&rows)?
        };
        let a_ref = self.reference_actions(&s0)?;
        let view = CriticView::new(cost, Head::Online);
        let d0 = self.lagrange.cost_bound;
        lyapunov_threshold(&view, &s0, &a_ref, self.config.gamma, d0)
    }

    fn state_row(&self, state: &[f64]) -> Result<Tensor> {
        if state.len() != self.spec.state_dim {
            return Err(Error::shape(
                "Agent::act",
                format!("state has {} components, expected {}", state.len(), self.spec.state_dim),
            ));
        }
        Tensor::matrix(1, state.len(), state.to_vec())
    }

    /// Chooses an action. Exploration samples and evolves (with the Lyapunov
    /// filter for the safe variant); evaluation evolves `tanh(mean)` from
    /// zero momentum.
    pub fn act(&self, state: &[f64], rng: &mut SamplingRng, explore: bool) -> Result<ActOutcome> {
        let s = self.state_row(state)?;
        let q = self.potential(Head::Online);
        let target = TargetPotential::new(q.as_ref(), self.alpha())?;
        let (sampler, _) = self.config.effective_samplers();
        if !explore {
            let a = self.policy.evaluation_action(&target, sampler, &s)?;
            let a0 = self.policy.base.mean_action(&s)?;
            return Ok(ActOutcome {
                action: a.into_data(),
                initial_action: a0.into_data(),
                safe: None,
                threshold: None,
            });
        }
        if self.config.variant == Variant::SacHpoSafe {
            let threshold = self.lyapunov_threshold(state)?;
            let cost = CriticView::new(self.cost_critics.as_ref().expect("safe variant has cost critic"), Head::Online);
            let filter = LyapunovFilter {
                cost: &cost,
                reference_actions: self.reference_actions(&s)?,
                threshold,
            };
            let (ev, mut outcomes) =
                self.policy
                    .safe_evolve(&target, sampler, &s, &filter, self.config.safe_max_steps, rng)?;
            return Ok(ActOutcome {
                action: ev.actions.into_data(),
                initial_action: ev.initial_actions.into_data(),
                safe: outcomes.pop(),
                threshold: Some(threshold),
            });
        }
        let ev = self.policy.evolve(&target, sampler, &s, rng, EvolveMode::Explore)?;
        Ok(ActOutcome {
            action: ev.actions.into_data(),
            initial_action: ev.initial_actions.into_data(),
            safe: None,
            threshold: None,
        })
    }

    /// Samples a minibatch and runs [`Agent::train_step`].
    pub fn train_from_buffer<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        buffer_rng: &mut R,
        rng: &mut SamplingRng,
    ) -> Result<TrainMetrics> {
        let batch = buffer.sample(self.config.batch_size, buffer_rng)?;
        self.train_step(&batch, rng)
    }

    /// One critic update, one policy update, one temperature update and the
    /// target-network blend.
    pub fn train_step(&mut self, batch: &Batch, rng: &mut SamplingRng) -> Result<TrainMetrics> {
        let alpha = self.alpha();
        let gamma = self.config.gamma;
        let (_, train_sampler) = self.config.effective_samplers();
        let m = batch.len();
        let d = self.spec.action_dim;

        // critic targets from the acting policy at s'
        let (next_actions, next_log_prob) = {
            let q = self.potential(Head::Target);
            let target = TargetPotential::new(q.as_ref(), alpha)?;
            let ev = self.policy.evolve(&target, train_sampler, &batch.next_states, rng, EvolveMode::Train)?;
            (ev.actions.map(|a| a.clamp(-1.0, 1.0)), ev.log_prob)
        };
        let q_next = self.critics.estimate(&batch.next_states, &next_actions, Head::Target)?;
        let y = bellman_target(&batch.rewards, &batch.terminals, &q_next, &next_log_prob, alpha, gamma)?;
        let (critic_loss, critic_grad_norm) = self.critics.fit(&mut self.critic_opt, &batch.states, &batch.actions, &y)?;

        let mut cost_critic_loss = 0.0;
        if let (Some(cost), Some(opt)) = (self.cost_critics.as_mut(), self.cost_opt.as_mut()) {
            let qc_next = cost.estimate(&batch.next_states, &next_actions, Head::Target)?;
            let yc = cost_bellman_target(&batch.costs, &batch.terminals, &qc_next, gamma)?;
            cost_critic_loss = cost.fit(opt, &batch.states, &batch.actions, &yc)?.0;
        }

        if self.config.variant.uses_cost() {
            self.reference = Some(self.policy.base.clone());
        }

        // policy update
        let policy_noise = standard_normal(&mut rng.policy, m, d);
        let mut tape = Tape::new();
        let bound = self.policy.bind(&mut tape, true)?;
        let states = tape.constant(batch.states.clone())?;
        // every variant scores actions with the target critic, so zero steps
        // reproduce the plain actor loss exactly
        let q = self.potential(Head::Target);
        let (loss, log_prob) = if self.config.variant.uses_leapfrog() {
            let momentum_noise = standard_normal(&mut rng.momentum, m, d);
            let target = TargetPotential { q: q.as_ref(), alpha };
            let (loss, ev) = hpo_policy_loss(
                &mut tape,
                &bound,
                &target,
                train_sampler,
                states,
                &policy_noise,
                &momentum_noise,
            )?;
            (loss, ev.log_prob)
        } else {
            sac_policy_loss(&mut tape, &bound.policy, q.as_ref(), alpha, states, &policy_noise)?
        };
        let policy_loss = tape.value(loss).item()?;
        let log_probs = tape.value(log_prob).clone();
        drop(q);
        let vars = bound.param_vars();
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = vars
            .iter()
            .zip(self.policy.params())
            .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros_like(p)))
            .collect();
        let policy_grad_norm = global_norm(&grads);
        self.policy_opt.step(&mut self.policy.params_mut(), &grads)?;

        let alpha_loss = self.temperature.update(&log_probs)?;

        self.critics.polyak_update(self.config.tau)?;
        if let Some(cost) = self.cost_critics.as_mut() {
            cost.polyak_update(self.config.tau)?;
        }
        self.updates += 1;

        Ok(TrainMetrics {
            critic_loss,
            cost_critic_loss,
            policy_loss,
            alpha_loss,
            alpha: self.alpha(),
            lambda: self.lagrange.lambda,
            critic_grad_norm,
            policy_grad_norm,
            mean_log_prob: log_probs.mean(),
        })
    }

    /// Networks, optimizer moments, temperature, multiplier and the
    /// constraint bookkeeping.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = AgentMeta {
            config: self.config.clone(),
            env_name: self.spec.name.clone(),
            state_dim: self.spec.state_dim,
            action_dim: self.spec.action_dim,
            max_episode_len: self.spec.max_episode_len,
            has_cost: self.spec.has_cost,
            cost_bound: self.spec.cost_bound,
            cost_convention: self.spec.cost_convention,
            discount: self.spec.discount,
        };
        let mut ck = Checkpoint {
            meta: serde_json::to_string(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?,
            records: Vec::new(),
        };
        for (name, t) in self.policy.named_params("policy") {
            ck.push(name, t.clone());
        }
        for (name, t) in self.critics.named_params("critic") {
            ck.push(name, t.clone());
        }
        if let Some(c) = &self.cost_critics {
            for (name, t) in c.named_params("cost") {
                ck.push(name, t.clone());
            }
        }
        if let Some(r) = &self.reference {
            for (name, t) in r.named_params("reference") {
                ck.push(name, t.clone());
            }
        }
        push_adam(&mut ck, "opt.policy", &self.policy_opt);
        push_adam(&mut ck, "opt.critic", &self.critic_opt);
        if let Some(o) = &self.cost_opt {
            push_adam(&mut ck, "opt.cost", o);
        }
        push_adam(&mut ck, "opt.alpha", &self.temperature.opt);
        ck.push_scalar("log_alpha", self.temperature.log_alpha.data()[0]);
        ck.push_scalar("lambda", self.lagrange.lambda);
        ck.push_scalar("updates", self.updates as f64);
        let recent: Vec<f64> = self.lagrange.recent.iter().copied().collect();
        ck.push("lagrange.recent", Tensor::new(vec![recent.len()], recent)?);
        let n0 = self.initial_states.len();
        let flat: Vec<f64> = self.initial_states.iter().flatten().copied().collect();
        ck.push("initial_states", Tensor::new(vec![n0, self.spec.state_dim], flat)?);
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: AgentMeta =
            serde_json::from_str(&ck.meta).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        let spec = EnvSpec {
            name: meta.env_name,
            state_dim: meta.state_dim,
            action_dim: meta.action_dim,
            max_episode_len: meta.max_episode_len,
            has_cost: meta.has_cost,
            cost_bound: meta.cost_bound,
            cost_convention: meta.cost_convention,
            discount: meta.discount,
        };
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut agent = Self::new(meta.config, &spec, &mut rng)?;

        let names: Vec<String> = agent.policy.named_params("policy").into_iter().map(|(n, _)| n).collect();
        load_into(ck, &names, agent.policy.params_mut())?;
        let names: Vec<String> = agent.critics.named_params("critic").into_iter().map(|(n, _)| n).collect();
        load_into(ck, &names, agent.critics.all_params_mut())?;
        if let Some(c) = agent.cost_critics.as_mut() {
            let names: Vec<String> = c.named_params("cost").into_iter().map(|(n, _)| n).collect();
            load_into(ck, &names, c.all_params_mut())?;
        }
        if ck.records.iter().any(|r| r.name.starts_with("reference.")) {
            let mut r = agent.policy.base.clone();
            let names: Vec<String> = r.named_params("reference").into_iter().map(|(n, _)| n).collect();
            load_into(ck, &names, r.params_mut())?;
            agent.reference = Some(r);
        }
        restore_adam(ck, "opt.policy", &mut agent.policy_opt)?;
        restore_adam(ck, "opt.critic", &mut agent.critic_opt)?;
        if let Some(o) = agent.cost_opt.as_mut() {
            restore_adam(ck, "opt.cost", o)?;
        }
        restore_adam(ck, "opt.alpha", &mut agent.temperature.opt)?;
        agent.temperature.log_alpha = Tensor::scalar(ck.scalar("log_alpha")?);
        agent.lagrange.lambda = ck.scalar("lambda")?;
        agent.updates = ck.scalar("updates")? as u64;
        agent.lagrange.recent = ck.get("lagrange.recent")?.data().iter().copied().collect();
        let s0 = ck.get("initial_states")?;
        let width = agent.spec.state_dim;
        let n0 = s0.shape().first().copied().unwrap_or(0);
        agent.initial_states = (0..n0).map(|i| s0.data()[i * width..(i + 1) * width].to_vec()).collect();
        Ok(agent)
    }
}

fn push_adam(ck: &mut Checkpoint, prefix: &str, opt: &AdamState) {
    ck.push_scalar(format!("{prefix}.step"), opt.step_count() as f64);
    let (m, v) = opt.moments();
    for (i, t) in m.iter().enumerate() {
        ck.push(format!("{prefix}.m.{i}"), t.clone());
    }
    for (i, t) in v.iter().enumerate() {
        ck.push(format!("{prefix}.v.{i}"), t.clone());
    }
}

fn restore_adam(ck: &Checkpoint, prefix: &str, opt: &mut AdamState) -> Result<()> {
    let step = ck.scalar(&format!("{prefix}.step"))? as u64;
    let n = opt.moments().0.len();
    let m = (0..n).map(|i| ck.get(&format!("{prefix}.m.{i}")).cloned()).collect::<Result<Vec<_>>>()?;
    let v = (0..n).map(|i| ck.get(&format!("{prefix}.v.{i}")).cloned()).collect::<Result<Vec<_>>>()?;
    opt.restore(step, m, v)
}

fn load_into(ck: &Checkpoint, names: &[String], params: Vec<&mut Tensor>) -> Result<()> {
    for (name, p) in names.iter().zip(params) {
        let t = ck.get(name)?;
        if t.shape() != p.shape() {
            return Err(Error::Checkpoint(format!(
                "record `{name}` has shape {:?}, expected {:?}",
                t.shape(),
                p.shape()
            )));
        }
        *p = t.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Env, EnvRegistry};
    use crate::hamiltonian::GatedLeapfrogNets;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(variant: Variant) -> AgentConfig {
        AgentConfig {
            variant,
            policy_hidden: 16,
            critic_hidden: vec![16, 16],
            net_hidden: 8,
            batch_size: 8,
            buffer_capacity: 100,
            ..Default::default()
        }
    }

    fn env(name: &str) -> Box<dyn Env> {
        EnvRegistry::with_builtins().make(name, &toml::Table::new()).unwrap()
    }

    fn filled_buffer(env: &mut dyn Env, n: usize, seed: u64) -> ReplayBuffer {
        let spec = env.spec().clone();
        let mut buf = ReplayBuffer::new(1000, spec.state_dim, spec.action_dim).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        env.reset(seed);
        let mut ep = 0;
        while buf.len() < n {
            let a: Vec<f64> = (0..spec.action_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = env.step(&a).unwrap();
            let done = t.done;
            buf.push(t).unwrap();
            if done {
                ep += 1;
                env.reset(seed + ep);
            }
        }
        buf
    }

    #[test]
    fn temperature_fixed_point_and_direction() {
        let mut t = Temperature::new(0.2, true, -2.0, 0.01).unwrap();
        t.update(&Tensor::filled(4, 1, 2.0)).unwrap();
        assert_eq!(t.alpha(), 0.2);
        // entropy below target (log prob high) raises alpha
        t.update(&Tensor::filled(4, 1, 3.0)).unwrap();
        assert!(t.alpha() > 0.2);
        let mut fixed = Temperature::new(0.2, false, -2.0, 0.01).unwrap();
        fixed.update(&Tensor::filled(4, 1, 3.0)).unwrap();
        assert_eq!(fixed.alpha(), 0.2);
    }

    #[test]
    fn lagrange_window_and_projection() {
        let mut l = LagrangeState::new(0.0, 0.1, 10.0, 2);
        assert_eq!(l.record_episode(5.0), 0.0);
        l.record_episode(25.0);
        assert!((l.lambda - 0.5).abs() < 1e-15);
        l.record_episode(25.0);
        assert!((l.lambda - 2.0).abs() < 1e-12);
        for _ in 0..100 {
            l.record_episode(0.0);
            assert!(l.lambda >= 0.0);
        }
        assert_eq!(l.lambda, 0.0);
    }

    #[test]
    fn train_step_is_deterministic() {
        for variant in [Variant::Sac, Variant::SacHpo] {
            let mut e = env("point_mass");
            let buf = filled_buffer(e.as_mut(), 64, 1);
            let run = || {
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                let mut agent = Agent::new(small(variant), e.spec(), &mut rng).unwrap();
                let mut srng = SamplingRng::from_seed(6);
                let mut brng = ChaCha8Rng::seed_from_u64(7);
                (0..20)
                    .map(|_| agent.train_from_buffer(&buf, &mut brng, &mut srng).unwrap())
                    .collect::<Vec<_>>()
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let mut e = env("constrained_point_mass");
        let buf = filled_buffer(e.as_mut(), 32, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = AgentConfig {
            lr: 0.0,
            ..small(Variant::SacHpoSafe)
        };
        let mut agent = Agent::new(cfg, e.spec(), &mut rng).unwrap();
        let before: Vec<Tensor> = agent.policy.params().into_iter().cloned().collect();
        let critics_before = agent.critics.q1.clone();
        let mut srng = SamplingRng::from_seed(2);
        for _ in 0..3 {
            agent.train_from_buffer(&buf, &mut rng, &mut srng).unwrap();
        }
        let after: Vec<Tensor> = agent.policy.params().into_iter().cloned().collect();
        assert_eq!(before, after);
        assert_eq!(agent.critics.q1, critics_before);
    }

    #[test]
    fn underflow_is_reported() {
        let mut e = env("point_mass");
        let buf = filled_buffer(e.as_mut(), 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = Agent::new(small(Variant::Sac), e.spec(), &mut rng).unwrap();
        let mut srng = SamplingRng::from_seed(2);
        assert!(matches!(
            agent.train_from_buffer(&buf, &mut rng, &mut srng),
            Err(Error::BufferUnderflow { .. })
        ));
    }

    #[test]
    fn evaluation_actions() {
        let e = env("point_mass");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = [0.3, -0.2, 0.0, 0.1];
        let sac = Agent::new(small(Variant::Sac), e.spec(), &mut rng).unwrap();
        let mut srng = SamplingRng::from_seed(2);
        let out = sac.act(&s, &mut srng, false).unwrap();
        let mean = sac.policy.base.mean_action(&Tensor::row(&s)).unwrap();
        assert_eq!(out.action, mean.data());

        let mut hpo = Agent::new(small(Variant::SacHpo), e.spec(), &mut rng).unwrap();
        hpo.policy.nets = GatedLeapfrogNets::inert(4, 2, 8, true).unwrap();
        let out = hpo.act(&s, &mut srng, false).unwrap();
        let mean = hpo.policy.base.mean_action(&Tensor::row(&s)).unwrap();
        assert_eq!(out.action, mean.data());
    }

    #[test]
    fn cost_variant_needs_cost_env() {
        let e = env("point_mass");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(Agent::new(small(Variant::SacLagrangian), e.spec(), &mut rng).is_err());
    }

    #[test]
    fn safe_act_reports_outcome() {
        let e = env("constrained_point_mass");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = Agent::new(small(Variant::SacHpoSafe), e.spec(), &mut rng).unwrap();
        agent.observe_initial_state(&[0.0, 0.0, 0.0, 0.0]);
        let mut srng = SamplingRng::from_seed(2);
        let out = agent.act(&[0.5, 0.5, 0.2, 0.0], &mut srng, true).unwrap();
        let o = out.safe.unwrap();
        assert!(o.steps_used <= agent.config.safe_max_steps);
        if o.accepted {
            assert!(o.cost_gap < out.threshold.unwrap());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut e = env("constrained_point_mass");
        let buf = filled_buffer(e.as_mut(), 32, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = Agent::new(
            AgentConfig {
                auto_alpha: true,
                ..small(Variant::SacHpoSafe)
            },
            e.spec(),
            &mut rng,
        )
        .unwrap();
        let mut srng = SamplingRng::from_seed(2);
        for _ in 0..3 {
            agent.train_from_buffer(&buf, &mut rng, &mut srng).unwrap();
        }
        agent.end_episode(&[1.0; 30]);
        agent.observe_initial_state(&[0.1, 0.2, 0.0, 0.0]);
        let ck = agent.to_checkpoint().unwrap();
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Agent::from_checkpoint(&Checkpoint::read_from(&bytes[..]).unwrap()).unwrap();
        assert_eq!(back.policy, agent.policy);
        assert_eq!(back.critics, agent.critics);
        assert_eq!(back.cost_critics, agent.cost_critics);
        assert_eq!(back.reference, agent.reference);
        assert_eq!(back.lagrange, agent.lagrange);
        assert_eq!(back.alpha(), agent.alpha());
        assert_eq!(back.initial_states, agent.initial_states);

        // identical continuation
        let mut a = agent;
        let mut b = back;
        let (mut r1, mut r2) = (ChaCha8Rng::seed_from_u64(9), ChaCha8Rng::seed_from_u64(9));
        let (mut s1, mut s2) = (SamplingRng::from_seed(3), SamplingRng::from_seed(3));
        assert_eq!(
            a.train_from_buffer(&buf, &mut r1, &mut s1).unwrap(),
            b.train_from_buffer(&buf, &mut r2, &mut s2).unwrap()
        );
    }
}
