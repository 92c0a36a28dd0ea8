//! Action-distribution exports for two-dimensional action spaces: base
//! samples, leapfrog-evolved samples and a Q grid for the background.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adcore::Tensor;
use crate::agents::Agent;
use crate::critic::Head;
use crate::error::{Error, Result};
use crate::hamiltonian::{ActionValue, EvolveMode, SamplingRng, TargetPotential};

/// `values[j][i]` is `Q(xs[i], ys[j])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl QGrid {
    /// `resolution` evenly spaced points per axis from -1 to 1 inclusive.
    pub fn evaluate<Q: ActionValue + ?Sized>(q: &Q, state: &[f64], resolution: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidArgument("grid resolution must be >= 2".into()));
        }
        let axis: Vec<f64> = (0..resolution)
            .map(|i| -1.0 + 2.0 * i as f64 / (resolution - 1) as f64)
            .collect();
        let points: Vec<Vec<f64>> = axis
            .iter()
            .flat_map(|&y| axis.iter().map(move |&x| vec![x, y]))
            .collect();
        let actions = Tensor::from_rows(&points)?;
        let states = Tensor::matrix(1, state.len(), state.to_vec())?.repeat_rows(points.len());
        let q = q.value(&states, &actions)?;
        let values = q.data().chunks(resolution).map(<[f64]>::to_vec).collect();
        Ok(Self {
            xs: axis.clone(),
            ys: axis,
            values,
        })
    }
}

/// Everything needed to draw one action-distribution figure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterExport {
    pub state_id: String,
    pub state: Vec<f64>,
    /// Samples of the base policy, clipped to `[-1, 1]`.
    pub base_actions: Vec<[f64; 2]>,
    /// The same samples after the leapfrog chain, clipped to `[-1, 1]`.
    pub evolved_actions: Vec<[f64; 2]>,
    pub q_grid: QGrid,
}

impl ScatterExport {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("scatter export: {m}")));
        if self.base_actions.is_empty() || self.evolved_actions.is_empty() {
            return bad("sample sets must be nonempty");
        }
        let g = &self.q_grid;
        if g.xs.len() < 2 || g.ys.len() < 2 {
            return bad("grid needs at least two points per axis");
        }
        let covers = |axis: &[f64]| {
            axis.first().is_some_and(|&a| a <= -1.0) && axis.last().is_some_and(|&b| b >= 1.0) && axis.windows(2).all(|w| w[0] < w[1])
        };
        if !covers(&g.xs) || !covers(&g.ys) {
            return bad("grid axes must increase and span [-1, 1]");
        }
        if g.values.len() != g.ys.len() || g.values.iter().any(|r| r.len() != g.xs.len()) {
            return bad("grid values do not match the axes");
        }
        let finite = |v: &[[f64; 2]]| v.iter().flatten().all(|x| x.is_finite());
        if !finite(&self.base_actions) || !finite(&self.evolved_actions) || g.values.iter().flatten().any(|x| !x.is_finite()) {
            return bad("non-finite value");
        }
        Ok(())
    }

    /// Validates, then writes pretty-printed JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let e: Self = serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        e.validate()?;
        Ok(e)
    }
}

/// Draws `samples` exploration chains from one state with the agent's
/// exploration sampler and records the critic on a `resolution`² grid.
pub fn export_scatter(
    agent: &Agent,
    state: &[f64],
    state_id: &str,
    samples: usize,
    resolution: usize,
    rng: &mut SamplingRng,
) -> Result<ScatterExport> {
    if agent.spec.action_dim != 2 {
        return Err(Error::InvalidArgument(format!(
            "scatter export needs a two-dimensional action space, got {}",
            agent.spec.action_dim
        )));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if state.len() != agent.spec.state_dim {
        return Err(Error::InvalidArgument(format!(
            "state has {} components, expected {}",
            state.len(),
            agent.spec.state_dim
        )));
    }
    let q = agent.potential(Head::Online);
    let target = TargetPotential::new(q.as_ref(), agent.alpha())?;
    let (sampler, _) = agent.config.effective_samplers();
    let states = Tensor::matrix(1, state.len(), state.to_vec())?.repeat_rows(samples);
    let ev = agent.policy.evolve(&target, sampler, &states, rng, EvolveMode::Explore)?;
    let pairs = |t: &Tensor| -> Vec<[f64; 2]> {
        t.data()
            .chunks(2)
            .map(|c| [c[0].clamp(-1.0, 1.0), c[1].clamp(-1.0, 1.0)])
            .collect()
    };
    let export = ScatterExport {
        state_id: state_id.to_owned(),
        state: state.to_vec(),
        base_actions: pairs(&ev.initial_actions),
        evolved_actions: pairs(&ev.actions),
        q_grid: QGrid::evaluate(q.as_ref(), state, resolution)?,
    };
    export.validate()?;
    Ok(export)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::Quadratic;

    fn sample_export() -> ScatterExport {
        let q = Quadratic {
            center: vec![0.2, -0.1],
            curvature: 2.0,
        };
        ScatterExport {
            state_id: "s0".into(),
            state: vec![],
            base_actions: vec![[0.0, 0.0], [0.5, 0.5]],
            evolved_actions: vec![[0.1, 0.0], [0.3, 0.2]],
            q_grid: QGrid::evaluate(&q, &[], 5).unwrap(),
        }
    }

    #[test]
    fn grid_layout() {
        let e = sample_export();
        let g = &e.q_grid;
        assert_eq!(g.xs, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        // values[j][i] = Q(xs[i], ys[j])
        let expect = -(0.5f64 - 0.2).powi(2) - (-1.0f64 + 0.1).powi(2);
        assert!((g.values[0][3] - expect).abs() < 1e-12);
        e.validate().unwrap();
    }

    #[test]
    fn round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.json");
        let e = sample_export();
        e.save(&p).unwrap();
        assert_eq!(ScatterExport::load(&p).unwrap(), e);

        let mut empty = e.clone();
        empty.evolved_actions.clear();
        assert!(empty.save(&dir.path().join("x.json")).is_err());
        assert!(!dir.path().join("x.json").exists());

        let mut short = e.clone();
        short.q_grid.xs = vec![-0.5, 0.0, 0.5, 0.75, 1.0];
        assert!(short.validate().is_err());

        let mut ragged = e;
        ragged.q_grid.values.pop();
        assert!(ragged.validate().is_err());
    }
}
