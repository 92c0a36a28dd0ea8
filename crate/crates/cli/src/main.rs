//! `hpo`: train, evaluate, sweep and ablate Hamiltonian policy optimization agents.
//!
//! Exit codes: 0 on success, 2 for configuration errors (including bad
//! command lines), 3 for any failure while running.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hpo_core::adcore::Checkpoint;
use hpo_core::agents::{AblationMode, Agent};
use hpo_core::envs::EnvRegistry;
use hpo_core::hamiltonian::SamplingRng;
use hpo_core::harness::{
    ablate, evaluate, export_scatter, run_with_registry, stream_rng, sweep, ExperimentConfig, MetricsRecord,
    RunSummary, Stream,
};
use hpo_core::{Error, Result};

#[derive(Parser)]
#[command(name = "hpo", version, about = "Hamiltonian policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent from a config file.
    Run {
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the configured one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a saved agent with deterministic actions.
    Eval {
        checkpoint: PathBuf,
        /// Registered environment name.
        env: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Environment parameter `key=value`; repeatable. Without any, the
        /// parameters of the `config.toml` next to the checkpoint are used
        /// when it names the same environment.
        #[arg(long = "env-param", value_name = "KEY=VALUE")]
        env_params: Vec<String>,
    },
    /// Train once per combination of the swept values.
    Sweep {
        config: PathBuf,
        /// `dotted.key=v1,v2,...`; repeatable, combined as a Cartesian product.
        #[arg(long = "param", value_name = "KEY=V1,V2", required = true)]
        params: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the config rewritten to one sampler ablation.
    Ablate {
        config: PathBuf,
        /// hpo, conv-conv, conv-gauss, gauss-gated, sac or no-momentum.
        #[arg(long)]
        mode: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export base and evolved action samples with the critic landscape for plotting.
    Scatter {
        checkpoint: PathBuf,
        /// Output JSON file.
        #[arg(short, long)]
        output: PathBuf,
        /// Comma-separated state; empty for stateless environments.
        #[arg(long, default_value = "")]
        state: String,
        #[arg(long, default_value = "s0")]
        state_id: String,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        _ => 3,
    }
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_owned(),
        message: message.into(),
    }
}

fn execute(command: Command) -> Result<()> {
    let registry = EnvRegistry::with_builtins();
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            report(&run_with_registry(&cfg, &registry, out.as_deref())?);
        }
        Command::Eval {
            checkpoint,
            env,
            episodes,
            seed,
            env_params,
        } => {
            if episodes == 0 {
                return Err(config_error("episodes", "must be >= 1"));
            }
            let agent = load_agent(&checkpoint)?;
            let params = if env_params.is_empty() {
                sibling_env_params(&checkpoint, &env)?
            } else {
                let mut t = toml::Table::new();
                for p in &env_params {
                    let (k, v) = split_assignment(p)?;
                    hpo_core::harness::set_dotted(&mut t, k, hpo_core::harness::parse_literal(v))?;
                }
                t
            };
            let mut e = registry.make(&env, &params)?;
            let spec = e.spec();
            if (spec.state_dim, spec.action_dim) != (agent.spec.state_dim, agent.spec.action_dim) {
                return Err(Error::InvalidArgument(format!(
                    "agent was trained on `{}` ({} states, {} actions), `{env}` has {} states and {} actions",
                    agent.spec.name, agent.spec.state_dim, agent.spec.action_dim, spec.state_dim, spec.action_dim
                )));
            }
            let r = evaluate(&agent, e.as_mut(), episodes, &mut stream_rng(seed, Stream::Eval))?;
            let out = serde_json::json!({
                "env": env,
                "episodes": episodes,
                "return_mean": r.return_mean,
                "return_std": r.return_std,
                "cost_mean": r.cost_mean,
            });
            println!("{out}");
        }
        Command::Sweep { config, params, out } => {
            let text = read_config_text(&config)?;
            let base: toml::Table = text.parse().map_err(|e: toml::de::Error| config_error("", e.message()))?;
            let mut parsed = Vec::with_capacity(params.len());
            for p in &params {
                let (k, v) = split_assignment(p)?;
                parsed.push((k.to_owned(), split_values(v)));
            }
            for s in sweep(&base, &parsed, &registry, out.as_deref())? {
                report(&s);
            }
        }
        Command::Ablate { config, mode, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let mode = AblationMode::parse(&mode)?;
            report(&ablate(&cfg, mode, &registry, out.as_deref())?);
        }
        Command::Scatter {
            checkpoint,
            output,
            state,
            state_id,
            samples,
            resolution,
            seed,
        } => {
            let agent = load_agent(&checkpoint)?;
            let state: Vec<f64> = split_values(&state)
                .iter()
                .map(|x| x.trim().parse::<f64>().map_err(|e| config_error("state", format!("`{x}`: {e}"))))
                .collect::<Result<_>>()?;
            let mut rng = SamplingRng::from_seed(seed);
            let e = export_scatter(&agent, &state, &state_id, samples, resolution, &mut rng)?;
            e.save(&output)?;
            println!("wrote {}", output.display());
        }
    }
    Ok(())
}

fn report(s: &RunSummary) {
    for r in &s.records {
        println!("{}", record_line(r));
    }
    println!("wrote {}", s.files.dir.display());
}

fn record_line(r: &MetricsRecord) -> String {
    format!(
        "step {:>8}  return {:>10.3} +- {:<8.3} cost {:>8.3}  alpha {:.4}  lambda {:.4}",
        r.step, r.eval_return_mean, r.eval_return_std, r.eval_cost_mean, r.alpha, r.lambda
    )
}

fn read_config_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| config_error("", format!("{}: {e}", path.display())))
}

fn load_agent(path: &Path) -> Result<Agent> {
    Agent::from_checkpoint(&Checkpoint::load(path)?)
}

/// Environment parameters from the run config saved next to a checkpoint.
fn sibling_env_params(checkpoint: &Path, env: &str) -> Result<toml::Table> {
    let path = checkpoint.with_file_name("config.toml");
    if !path.exists() {
        return Ok(toml::Table::new());
    }
    let cfg = ExperimentConfig::load(&path)?;
    Ok(if cfg.env.name == env { cfg.env.params } else { toml::Table::new() })
}

fn split_assignment(raw: &str) -> Result<(&str, &str)> {
    match raw.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim(), v)),
        _ => Err(config_error("param", format!("expected KEY=VALUE, got `{raw}`"))),
    }
}

/// Splits on commas outside brackets, so `[64,64],[32,32]` is two values.
fn split_values(raw: &str) -> Vec<String> {
    if raw.trim().is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in raw.chars() {
        match c {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut cur));
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    out.push(cur);
    out
}
