use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::AgentConfig;
use crate::error::{Error, Result};

/// Environment variable that, when set, roots every relative output directory.
pub const OUTPUT_ROOT_VAR: &str = "HPO_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: String,
    #[serde(default)]
    pub params: toml::Table,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            name: "point_mass".into(),
            params: toml::Table::new(),
        }
    }
}

/// One training run, as read from a TOML file.
///
/// If `agent.profile` names a built-in profile, that profile's values replace
/// the agent defaults first and every key given explicitly in the file is
/// laid on top.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub ema_window: usize,
    pub updates_per_step: usize,
    /// Relative paths are resolved against `HPO_OUTPUT_ROOT` when it is set.
    pub output_dir: Option<PathBuf>,
    /// Adds wall-clock seconds to each metrics record. Off by default because
    /// it makes metrics files differ between otherwise identical runs.
    pub record_wall_time: bool,
    pub env: EnvConfig,
    pub agent: AgentConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 0,
            total_steps: 100_000,
            eval_interval: 10_000,
            eval_episodes: 10,
            ema_window: 5,
            updates_per_step: 1,
            output_dir: None,
            record_wall_time: false,
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_owned()))?;
        Self::from_table(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Profile overlay, schema check (unknown keys rejected with their full
    /// path) and value validation.
    pub fn from_table(mut table: toml::Table) -> Result<Self> {
        if let Some(toml::Value::Table(agent)) = table.get_mut("agent") {
            if let Some(profile) = agent.get("profile") {
                let name = profile
                    .as_str()
                    .ok_or_else(|| Error::config("agent.profile", "must be a string"))?;
                let base = AgentConfig::with_profile(name)?;
                let mut merged = toml::Table::try_from(&base)
                    .map_err(|e| Error::config("agent", format!("cannot serialize profile: {e}")))?;
                merge_tables(&mut merged, std::mem::take(agent));
                *agent = merged;
            }
        }
        let cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().message().to_owned())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_interval == 0 {
            return Err(Error::config("eval_interval", "must be >= 1"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes", "must be >= 1"));
        }
        if self.ema_window == 0 {
            return Err(Error::config("ema_window", "must be >= 1"));
        }
        if self.updates_per_step == 0 {
            return Err(Error::config("updates_per_step", "must be >= 1"));
        }
        self.agent.validate()
    }

    /// Fully resolved config, suitable for saving next to the results.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(format!("cannot serialize config: {e}")))
    }

    /// Steps at which evaluations happen: 0, every `eval_interval`, and the
    /// final step.
    pub fn eval_steps(&self) -> Vec<usize> {
        let mut steps: Vec<usize> = (0..=self.total_steps).step_by(self.eval_interval).collect();
        if steps.last() != Some(&self.total_steps) {
            steps.push(self.total_steps);
        }
        steps
    }

    /// Where this run writes. `output_dir` if given, else `runs/<name>/seed_<seed>`;
    /// relative paths go under `HPO_OUTPUT_ROOT` when it is set.
    pub fn resolve_output_dir(&self) -> PathBuf {
        let dir = self
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.name).join(format!("seed_{}", self.seed)));
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
            _ => dir,
        }
    }
}

/// Recursively lays `overlay` onto `base`; nested tables merge, anything
/// else replaces.
pub fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses a command-line value as a TOML literal, falling back to a string.
pub fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

/// Sets `a.b.c = value`, creating intermediate tables.
pub fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "malformed key"));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::config(key, format!("`{p}` is not a table"))),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
