//! Metrics persistence.
//!
//! `metrics.jsonl` holds one [`MetricsRecord`] per evaluation as a flat JSON
//! object per line. Fields:
//!
//! | field | meaning |
//! |---|---|
//! | `step` | environment steps taken so far |
//! | `episodes` | training episodes completed so far |
//! | `eval_return_mean`, `eval_return_std` | undiscounted return over the evaluation episodes (population std) |
//! | `eval_cost_mean` | undiscounted summed cost per evaluation episode |
//! | `critic_loss`, `cost_critic_loss`, `policy_loss`, `alpha_loss` | means over the updates since the previous record, `null` if none |
//! | `critic_grad_norm`, `policy_grad_norm`, `mean_log_prob` | same averaging |
//! | `alpha`, `lambda` | values at record time |
//! | `updates` | gradient updates so far |
//! | `violations_discarded` | Lyapunov-rejected proposals since the previous record |
//! | `safe_exhausted` | safe chains that ran out of steps since the previous record |
//! | `wall_time` | seconds since the run started; present only when enabled |
//!
//! `metrics.csv` carries the same columns (alphabetical, empty for `null`)
//! plus `eval_return_ema`, the smoothed return.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ema_smooth;
use crate::agents::TrainMetrics;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub step: usize,
    pub episodes: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub eval_cost_mean: f64,
    pub critic_loss: Option<f64>,
    pub cost_critic_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub critic_grad_norm: Option<f64>,
    pub policy_grad_norm: Option<f64>,
    pub mean_log_prob: Option<f64>,
    pub alpha: f64,
    pub lambda: f64,
    pub updates: u64,
    pub violations_discarded: u64,
    pub safe_exhausted: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

/// Running mean of [`TrainMetrics`] between two records.
#[derive(Clone, Debug, Default)]
pub struct TrainAccumulator {
    sum: TrainMetrics,
    count: usize,
}

impl TrainAccumulator {
    pub fn add(&mut self, m: &TrainMetrics) {
        let s = &mut self.sum;
        s.critic_loss += m.critic_loss;
        s.cost_critic_loss += m.cost_critic_loss;
        s.policy_loss += m.policy_loss;
        s.alpha_loss += m.alpha_loss;
        s.critic_grad_norm += m.critic_grad_norm;
        s.policy_grad_norm += m.policy_grad_norm;
        s.mean_log_prob += m.mean_log_prob;
        self.count += 1;
    }

    /// Fills the loss fields of `rec` and resets.
    pub fn drain_into(&mut self, rec: &mut MetricsRecord, with_cost: bool) {
        if self.count > 0 {
            let n = self.count as f64;
            let s = &self.sum;
            rec.critic_loss = Some(s.critic_loss / n);
            rec.cost_critic_loss = with_cost.then_some(s.cost_critic_loss / n);
            rec.policy_loss = Some(s.policy_loss / n);
            rec.alpha_loss = Some(s.alpha_loss / n);
            rec.critic_grad_norm = Some(s.critic_grad_norm / n);
            rec.policy_grad_norm = Some(s.policy_grad_norm / n);
            rec.mean_log_prob = Some(s.mean_log_prob / n);
        }
        *self = Self::default();
    }
}

/// One Lyapunov-filtered action choice, written to `violations.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViolationRecord {
    pub step: usize,
    pub steps_used: usize,
    pub violations_discarded: usize,
    pub accepted: bool,
    pub cost_gap: f64,
    pub threshold: f64,
}

/// Append-only line-delimited JSON writer, flushed after every line.
pub struct JsonlWriter {
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn append<T: Serialize>(&mut self, item: &T) -> Result<()> {
        let line = serde_json::to_string(item).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::InvalidArgument(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    read_jsonl(path)
}

/// Writes the CSV export, including the smoothed return column.
pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord], ema_window: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let Some(first) = records.first() else {
        w.flush()?;
        return Ok(());
    };
    let as_map = |r: &MetricsRecord| match serde_json::to_value(r) {
        Ok(serde_json::Value::Object(m)) => m,
        _ => unreachable!("records serialize to objects"),
    };
    let mut header: Vec<String> = as_map(first).keys().cloned().collect();
    header.push("eval_return_ema".into());
    w.write_record(&header).map_err(csv_err)?;
    let returns: Vec<f64> = records.iter().map(|r| r.eval_return_mean).collect();
    let smooth = ema_smooth(&returns, ema_window)?;
    for (r, ema) in records.iter().zip(smooth) {
        let m = as_map(r);
        let mut row: Vec<String> = header[..header.len() - 1]
            .iter()
            .map(|k| match m.get(k) {
                None | Some(serde_json::Value::Null) => String::new(),
                Some(v) => v.to_string(),
            })
            .collect();
        row.push(serde_json::Value::from(ema).to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}
