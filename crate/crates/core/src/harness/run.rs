use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use super::config::{parse_literal, set_dotted, ExperimentConfig};
use super::metrics::{write_metrics_csv, JsonlWriter, MetricsRecord, TrainAccumulator, ViolationRecord};
use super::{stream_rng, RandomController, Stream};
use crate::agents::{AblationMode, Agent, Variant};
use crate::envs::{Env, EnvRegistry};
use crate::error::{Error, Result};
use crate::hamiltonian::SamplingRng;
use crate::replay::ReplayBuffer;

/// Undiscounted per-episode statistics of an evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub return_mean: f64,
    pub return_std: f64,
    pub cost_mean: f64,
    pub returns: Vec<f64>,
}

/// Runs `episodes` episodes of `controller`, resetting with seeds drawn
/// from `rng`.
pub fn evaluate_controller<F>(env: &mut dyn Env, episodes: usize, rng: &mut ChaCha8Rng, mut controller: F) -> Result<EvalResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    let mut costs = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = env.reset(rng.next_u64());
        let (mut ret, mut cost) = (0.0, 0.0);
        loop {
            let action = controller(&state)?;
            let t = env.step(&action)?;
            ret += t.reward;
            cost += t.cost;
            if t.done {
                break;
            }
            state = t.next_state;
        }
        returns.push(ret);
        costs.push(cost);
    }
    let n = episodes as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok(EvalResult {
        return_mean: mean,
        return_std: var.sqrt(),
        cost_mean: costs.iter().sum::<f64>() / n,
        returns,
    })
}

/// Evaluates the agent's deterministic actions.
pub fn evaluate(agent: &Agent, env: &mut dyn Env, episodes: usize, rng: &mut ChaCha8Rng) -> Result<EvalResult> {
    // deterministic actions draw nothing from this
    let mut unused = SamplingRng::from_seed(0);
    evaluate_controller(env, episodes, rng, |s| Ok(agent.act(s, &mut unused, false)?.action))
}

/// Paths of everything a run writes.
#[derive(Clone, Debug, PartialEq)]
pub struct RunFiles {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub metrics_csv: PathBuf,
    pub violations: PathBuf,
    pub checkpoint: PathBuf,
    pub config: PathBuf,
}

impl RunFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            metrics: dir.join("metrics.jsonl"),
            metrics_csv: dir.join("metrics.csv"),
            violations: dir.join("violations.jsonl"),
            checkpoint: dir.join("checkpoint.bin"),
            config: dir.join("config.toml"),
        }
    }
}

pub struct RunSummary {
    pub files: RunFiles,
    pub records: Vec<MetricsRecord>,
    pub agent: Agent,
}

/// Trains with the built-in environments; see [`run_with_registry`].
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    run_with_registry(cfg, &EnvRegistry::with_builtins(), None)
}

/// The full training loop.
///
/// The first `warmup_steps` actions are uniform; after that the agent acts
/// and, once the buffer holds a batch, takes `updates_per_step` updates per
/// environment step. Evaluations happen at [`ExperimentConfig::eval_steps`].
/// `out_dir` overrides the configured output directory.
pub fn run_with_registry(cfg: &ExperimentConfig, registry: &EnvRegistry, out_dir: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    let started = Instant::now();
    let mut env = registry.make(&cfg.env.name, &cfg.env.params)?;
    let mut eval_env = registry.make(&cfg.env.name, &cfg.env.params)?;
    let spec = env.spec().clone();

    let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.resolve_output_dir());
    std::fs::create_dir_all(&dir)?;
    let files = RunFiles::in_dir(&dir);
    std::fs::write(&files.config, cfg.to_toml_string()?)?;

    let seed = cfg.seed;
    let mut init_rng = stream_rng(seed, Stream::Init);
    let mut env_rng = stream_rng(seed, Stream::Env);
    let mut buffer_rng = stream_rng(seed, Stream::Buffer);
    let mut eval_rng = stream_rng(seed, Stream::Eval);
    let mut sampling = SamplingRng::new(stream_rng(seed, Stream::Policy), stream_rng(seed, Stream::Momentum));
    let mut warmup = RandomController {
        action_dim: spec.action_dim,
        rng: stream_rng(seed, Stream::Warmup),
    };

    let mut agent = Agent::new(cfg.agent.clone(), &spec, &mut init_rng)?;
    let mut buffer = ReplayBuffer::new(cfg.agent.buffer_capacity, spec.state_dim, spec.action_dim)?;
    let mut metrics = JsonlWriter::create(&files.metrics)?;
    let mut violations = if cfg.agent.variant == Variant::SacHpoSafe {
        Some(JsonlWriter::create(&files.violations)?)
    } else {
        None
    };

    let mut records = Vec::new();
    let mut acc = TrainAccumulator::default();
    let (mut discarded, mut exhausted, mut episodes) = (0u64, 0u64, 0usize);
    let mut record = |step: usize,
                      agent: &Agent,
                      acc: &mut TrainAccumulator,
                      discarded: &mut u64,
                      exhausted: &mut u64,
                      episodes: usize,
                      eval_env: &mut dyn Env,
                      eval_rng: &mut ChaCha8Rng|
     -> Result<MetricsRecord> {
        let ev = evaluate(agent, eval_env, cfg.eval_episodes, eval_rng)?;
        let mut rec = MetricsRecord {
            step,
            episodes,
            eval_return_mean: ev.return_mean,
            eval_return_std: ev.return_std,
            eval_cost_mean: ev.cost_mean,
            alpha: agent.alpha(),
            lambda: agent.lagrange.lambda,
            updates: agent.updates,
            violations_discarded: std::mem::take(discarded),
            safe_exhausted: std::mem::take(exhausted),
            wall_time: cfg.record_wall_time.then(|| started.elapsed().as_secs_f64()),
            ..Default::default()
        };
        acc.drain_into(&mut rec, agent.cost_critics.is_some());
        metrics.append(&rec)?;
        Ok(rec)
    };

    let schedule = cfg.eval_steps();
    let mut next_eval = schedule.iter().peekable();
    if next_eval.peek() == Some(&&0) {
        next_eval.next();
        records.push(record(0, &agent, &mut acc, &mut discarded, &mut exhausted, 0, eval_env.as_mut(), &mut eval_rng)?);
    }

    let mut state = env.reset(env_rng.next_u64());
    agent.observe_initial_state(&state);
    let mut episode_costs = Vec::new();
    for step in 1..=cfg.total_steps {
        let action = if step <= cfg.agent.warmup_steps {
            warmup.act()
        } else {
            let out = agent.act(&state, &mut sampling, true)?;
            if let (Some(o), Some(threshold)) = (out.safe, out.threshold) {
                discarded += o.violations_discarded as u64;
                exhausted += u64::from(!o.accepted);
                if let Some(w) = violations.as_mut() {
                    w.append(&ViolationRecord {
                        step,
                        steps_used: o.steps_used,
                        violations_discarded: o.violations_discarded,
                        accepted: o.accepted,
                        cost_gap: o.cost_gap,
                        threshold,
                    })?;
                }
            }
            out.action
        };
        let t = env.step(&action)?;
        episode_costs.push(t.cost);
        let done = t.done;
        let next = t.next_state.clone();
        buffer.push(t)?;
        if done {
            agent.end_episode(&episode_costs);
            episode_costs.clear();
            episodes += 1;
            state = env.reset(env_rng.next_u64());
            agent.observe_initial_state(&state);
        } else {
            state = next;
        }

        if step > cfg.agent.warmup_steps && buffer.len() >= cfg.agent.batch_size {
            for _ in 0..cfg.updates_per_step {
                acc.add(&agent.train_from_buffer(&buffer, &mut buffer_rng, &mut sampling)?);
            }
        }

        if next_eval.peek() == Some(&&step) {
            next_eval.next();
            records.push(record(
                step,
                &agent,
                &mut acc,
                &mut discarded,
                &mut exhausted,
                episodes,
                eval_env.as_mut(),
                &mut eval_rng,
            )?);
        }
    }

    let mut ck = agent.to_checkpoint()?;
    ck.push_scalar("buffer.cursor", buffer.cursor() as f64);
    ck.push_scalar("buffer.len", buffer.len() as f64);
    ck.save(&files.checkpoint)?;
    write_metrics_csv(&files.metrics_csv, &records, cfg.ema_window)?;
    Ok(RunSummary { files, records, agent })
}

/// Cartesian product of `key=v1,v2,...` assignments, first key slowest.
pub fn grid_combinations(params: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    params.iter().fold(vec![Vec::new()], |acc, (key, values)| {
        acc.into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push((key.clone(), v.clone()));
                    next
                })
            })
            .collect()
    })
}

/// One run per combination, each in `<output>/<key=value,...>`.
pub fn sweep(
    base: &toml::Table,
    params: &[(String, Vec<String>)],
    registry: &EnvRegistry,
    out_dir: Option<&Path>,
) -> Result<Vec<RunSummary>> {
    if params.is_empty() || params.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::config("param", "every swept key needs at least one value"));
    }
    let root = match out_dir {
        Some(d) => d.to_path_buf(),
        None => ExperimentConfig::from_table(base.clone())?.resolve_output_dir(),
    };
    let combos = grid_combinations(params);
    // validate everything before the first run starts
    let mut configs = Vec::with_capacity(combos.len());
    for combo in &combos {
        let mut table = base.clone();
        for (k, v) in combo {
            set_dotted(&mut table, k, parse_literal(v))?;
        }
        let label: Vec<String> = combo.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let label = label.join(",").replace(['/', '\\'], "_");
        configs.push((ExperimentConfig::from_table(table)?, root.join(label)));
    }
    configs
        .into_iter()
        .map(|(cfg, dir)| run_with_registry(&cfg, registry, Some(&dir)))
        .collect()
}

/// Runs `cfg` rewritten to an ablation mode, in `<output>/<mode>`.
pub fn ablate(
    cfg: &ExperimentConfig,
    mode: AblationMode,
    registry: &EnvRegistry,
    out_dir: Option<&Path>,
) -> Result<RunSummary> {
    let mut cfg = cfg.clone();
    mode.apply(&mut cfg.agent);
    cfg.validate()?;
    let root = out_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.resolve_output_dir());
    run_with_registry(&cfg, registry, Some(&root.join(mode.name())))
}
