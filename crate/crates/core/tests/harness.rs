use std::collections::HashMap;

use hpo_core::agents::AblationMode;
use hpo_core::envs::EnvRegistry;
use hpo_core::hamiltonian::{SamplerKind, SamplingRng};
use hpo_core::harness::{
    ablate, ema_smooth, export_scatter, read_jsonl, read_metrics, run_with_registry, sweep, ExperimentConfig,
    MetricsRecord, ScatterExport, OUTPUT_ROOT_VAR,
};
use hpo_core::Error;

const TINY: &str = "total_steps = 600\neval_interval = 200\neval_episodes = 2\n\
                    [env]\nname = \"point_mass\"\n[env.params]\nhorizon = 50\n\
                    [agent]\npolicy_hidden = 16\ncritic_hidden = [16, 16]\nnet_hidden = 8\nbatch_size = 16\nwarmup_steps = 100\n";

fn tiny() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(TINY).unwrap()
}

#[test]
fn zero_step_run_has_only_the_initial_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.total_steps = 0;
    let s = run_with_registry(&cfg, &EnvRegistry::with_builtins(), Some(dir.path())).unwrap();
    let records = read_metrics(&s.files.metrics).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].step, 0);
    assert_eq!(records[0].updates, 0);
    assert!(records[0].critic_loss.is_none());
    assert!(s.files.checkpoint.exists());
    assert!(!s.files.violations.exists(), "only safe runs log filtered actions");
    let saved = ExperimentConfig::load(&s.files.config).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn metrics_follow_the_schedule_and_the_csv_carries_the_ema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny();
    let s = run_with_registry(&cfg, &EnvRegistry::with_builtins(), Some(dir.path())).unwrap();
    let records = read_metrics(&s.files.metrics).unwrap();
    assert_eq!(records, s.records);
    assert_eq!(records.iter().map(|r| r.step).collect::<Vec<_>>(), cfg.eval_steps());
    assert!(records.last().unwrap().updates > 0);
    assert!(records.iter().all(|r| r.wall_time.is_none()));
    // every line is a flat object that parses on its own
    for line in std::fs::read_to_string(&s.files.metrics).unwrap().lines() {
        let _: MetricsRecord = serde_json::from_str(line).unwrap();
    }

    let mut reader = csv::Reader::from_path(&s.files.metrics_csv).unwrap();
    let headers = reader.headers().unwrap().clone();
    let rows: Vec<HashMap<String, String>> = reader
        .records()
        .map(|r| headers.iter().map(String::from).zip(r.unwrap().iter().map(String::from)).collect())
        .collect();
    assert_eq!(rows.len(), records.len());
    let raw: Vec<f64> = records.iter().map(|r| r.eval_return_mean).collect();
    let ema = ema_smooth(&raw, cfg.ema_window).unwrap();
    for (row, (r, e)) in rows.iter().zip(raw.iter().zip(&ema)) {
        assert_eq!(row["eval_return_mean"].parse::<f64>().unwrap(), *r);
        assert!((row["eval_return_ema"].parse::<f64>().unwrap() - e).abs() < 1e-12);
    }
}

#[test]
fn wall_time_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.total_steps = 200;
    cfg.record_wall_time = true;
    let s = run_with_registry(&cfg, &EnvRegistry::with_builtins(), Some(dir.path())).unwrap();
    assert!(s.records.iter().all(|r| r.wall_time.is_some_and(|t| t >= 0.0)));
}

#[test]
fn sweep_runs_every_combination_in_its_own_directory() {
    let dir = tempfile::tempdir().unwrap();
    let base: toml::Table = TINY.replace("total_steps = 600", "total_steps = 200").parse().unwrap();
    let params = vec![
        ("agent.leapfrog.steps".to_string(), vec!["1".to_string(), "2".to_string()]),
        ("seed".to_string(), vec!["5".to_string()]),
    ];
    let runs = sweep(&base, &params, &EnvRegistry::with_builtins(), Some(dir.path())).unwrap();
    assert_eq!(runs.len(), 2);
    for (run, k) in runs.iter().zip([1, 2]) {
        let expected = dir.path().join(format!("agent.leapfrog.steps={k},seed=5"));
        assert_eq!(run.files.dir, expected);
        let saved = ExperimentConfig::load(&run.files.config).unwrap();
        assert_eq!(saved.agent.leapfrog.steps, k);
        assert_eq!(saved.seed, 5);
    }
}

#[test]
fn sweep_validates_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let base: toml::Table = TINY.parse().unwrap();
    let params = vec![("agent.gamma".to_string(), vec!["0.9".to_string(), "1.5".to_string()])];
    match sweep(&base, &params, &EnvRegistry::with_builtins(), Some(dir.path())) {
        Err(Error::Config { path, .. }) => assert_eq!(path, "agent.gamma"),
        Err(other) => panic!("{other}"),
        Ok(_) => panic!("invalid sweep accepted"),
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0, "no run may start");
    assert!(sweep(&base, &[], &EnvRegistry::with_builtins(), Some(dir.path())).is_err());
}

#[test]
fn ablation_rewrites_the_samplers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.total_steps = 200;
    let s = ablate(&cfg, AblationMode::ConvGauss, &EnvRegistry::with_builtins(), Some(dir.path())).unwrap();
    assert_eq!(s.files.dir, dir.path().join("conv-gauss"));
    let saved = ExperimentConfig::load(&s.files.config).unwrap();
    assert_eq!(saved.agent.effective_samplers(), AblationMode::ConvGauss.samplers());
    assert_eq!(AblationMode::ConvGauss.samplers(), (SamplerKind::Conventional, SamplerKind::None));
}

#[test]
fn config_errors_carry_field_paths() {
    for (text, path) in [
        ("[agent]\nvarient = \"sac\"", "agent.varient"),
        ("[agent]\nvariant = \"ppo\"", "agent.variant"),
        ("total_steps = -5", "total_steps"),
        ("[env]\nname = 3", "env.name"),
        ("ema_window = 0", "ema_window"),
    ] {
        match ExperimentConfig::from_toml_str(text) {
            Err(Error::Config { path: p, .. }) => assert_eq!(p, path, "{text}"),
            other => panic!("{text}: {other:?}"),
        }
    }
    assert!(matches!(ExperimentConfig::from_toml_str("seed = "), Err(Error::Config { .. })));
    let missing = std::path::Path::new("/nonexistent/config.toml");
    assert!(matches!(ExperimentConfig::load(missing), Err(Error::Config { .. })));

    // unknown env names and params surface when the run starts
    let mut cfg = tiny();
    cfg.env.name = "cartpole".into();
    let dir = tempfile::tempdir().unwrap();
    let e = run_with_registry(&cfg, &EnvRegistry::with_builtins(), Some(dir.path())).err().unwrap();
    assert!(matches!(e, Error::Config { .. }), "{e}");
    let mut cfg = tiny();
    cfg.env.params.insert("horizn".into(), toml::Value::Integer(5));
    let e = run_with_registry(&cfg, &EnvRegistry::with_builtins(), Some(dir.path())).err().unwrap();
    assert!(matches!(e, Error::Config { .. }), "{e}");
}

#[test]
fn output_root_prefixes_relative_directories() {
    let cfg = ExperimentConfig::from_toml_str("name = \"exp\"\nseed = 3").unwrap();
    std::env::set_var(OUTPUT_ROOT_VAR, "/tmp/hpo-root");
    let rooted = cfg.resolve_output_dir();
    let mut absolute = cfg.clone();
    absolute.output_dir = Some("/abs/out".into());
    let abs = absolute.resolve_output_dir();
    std::env::remove_var(OUTPUT_ROOT_VAR);
    assert_eq!(rooted, std::path::PathBuf::from("/tmp/hpo-root/runs/exp/seed_3"));
    assert_eq!(abs, std::path::PathBuf::from("/abs/out"));
    assert_eq!(cfg.resolve_output_dir(), std::path::PathBuf::from("runs/exp/seed_3"));
}

#[test]
fn safe_runs_log_every_filtered_action() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("point_mass", "constrained_point_mass") + "variant = \"sac_hpo_safe\"\n";
    let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    let s = run_with_registry(&cfg, &EnvRegistry::with_builtins(), Some(dir.path())).unwrap();
    let log: Vec<hpo_core::harness::ViolationRecord> = read_jsonl(&s.files.violations).unwrap();
    // one entry per agent-chosen step after the warmup
    assert_eq!(log.len(), cfg.total_steps - cfg.agent.warmup_steps);
    assert!(log.windows(2).all(|w| w[0].step < w[1].step));
    let discarded: usize = log.iter().map(|v| v.violations_discarded).sum();
    let reported: u64 = s.records.iter().map(|r| r.violations_discarded).sum();
    assert_eq!(discarded as u64, reported);
}

#[test]
fn scatter_export_from_an_agent() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("point_mass", "multimodal_bandit").replace("[env.params]\nhorizon = 50\n", "");
    let mut cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    cfg.total_steps = 300;
    let s = run_with_registry(&cfg, &EnvRegistry::with_builtins(), Some(dir.path())).unwrap();
    let mut rng = SamplingRng::from_seed(1);
    let e = export_scatter(&s.agent, &[], "bandit", 200, 21, &mut rng).unwrap();
    assert_eq!(e.base_actions.len(), 200);
    assert_eq!(e.q_grid.values.len(), 21);
    assert!(e.q_grid.values.iter().all(|r| r.len() == 21));
    assert!(e.evolved_actions.iter().flatten().all(|a| a.abs() <= 1.0));
    let path = dir.path().join("scatter.json");
    e.save(&path).unwrap();
    assert_eq!(ScatterExport::load(&path).unwrap(), e);
    assert!(export_scatter(&s.agent, &[], "bandit", 0, 21, &mut rng).is_err());
    assert!(export_scatter(&s.agent, &[0.0], "bandit", 10, 21, &mut rng).is_err());
}
