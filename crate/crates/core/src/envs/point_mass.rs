use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clip_action, CostConvention, Env, EnvSpec, Transition};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PointMassParams {
    pub goal: [f64; 2],
    pub horizon: usize,
    pub dt: f64,
    pub max_speed: f64,
    pub action_cost: f64,
    /// Initial positions are uniform in `[-init_range, init_range]^2`.
    pub init_range: f64,
    pub discount: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        Self {
            goal: [0.0, 0.0],
            horizon: 200,
            dt: 0.1,
            max_speed: 2.0,
            action_cost: 0.01,
            init_range: 1.0,
            discount: 0.99,
        }
    }
}

impl PointMassParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("env.params.{field}"), msg));
        if self.horizon == 0 {
            return bad("horizon", "must be >= 1");
        }
        if !(self.dt > 0.0) {
            return bad("dt", "must be > 0");
        }
        if !(self.max_speed > 0.0) {
            return bad("max_speed", "must be > 0");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount", "must lie in (0, 1]");
        }
        if !(self.init_range >= 0.0) || !(self.action_cost >= 0.0) {
            return bad("init_range", "ranges and costs must be nonnegative");
        }
        Ok(())
    }
}

/// Planar point mass driven by bounded accelerations toward a fixed goal.
///
/// State is `(x, y, vx, vy)`. One step applies `pos += dt * vel` then
/// `vel += dt * a`, with the speed clipped to `max_speed`. The reward is
/// `-|pos' - goal|^2 - action_cost * |a|^2`, evaluated at the new position.
#[derive(Clone, Debug)]
pub struct PointMass2D {
    params: PointMassParams,
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    t: usize,
    done: bool,
}

impl PointMass2D {
    pub fn new(params: PointMassParams) -> Result<Self> {
        params.validate()?;
        let spec = EnvSpec {
            name: "point_mass".into(),
            state_dim: 4,
            action_dim: 2,
            max_episode_len: params.horizon,
            has_cost: false,
            cost_bound: 0.0,
            cost_convention: CostConvention::Discounted,
            discount: params.discount,
        };
        Ok(Self {
            params,
            spec,
            pos: [0.0; 2],
            vel: [0.0; 2],
            t: 0,
            done: true,
        })
    }

    pub fn params(&self) -> &PointMassParams {
        &self.params
    }

    fn state(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    /// Puts the mass at an explicit position/velocity and starts an episode.
    pub fn reset_to(&mut self, pos: [f64; 2], vel: [f64; 2]) -> Vec<f64> {
        self.pos = pos;
        self.vel = vel;
        self.t = 0;
        self.done = false;
        self.state()
    }

    /// Dynamics shared with the constrained variant; returns the transition
    /// and the post-step speed.
    fn advance(&mut self, action: &[f64]) -> Result<(Transition, f64)> {
        if self.done {
            return Err(Error::Env("step called on a finished episode; reset first".into()));
        }
        let a = clip_action(action, 2)?;
        let state = self.state();
        let dt = self.params.dt;
        for i in 0..2 {
            self.pos[i] += dt * self.vel[i];
            self.vel[i] += dt * a[i];
        }
        let speed = self.vel[0].hypot(self.vel[1]);
        if speed > self.params.max_speed {
            let k = self.params.max_speed / speed;
            self.vel[0] *= k;
            self.vel[1] *= k;
        }
        let speed = self.vel[0].hypot(self.vel[1]);
        let dx = self.pos[0] - self.params.goal[0];
        let dy = self.pos[1] - self.params.goal[1];
        let reward = -(dx * dx + dy * dy) - self.params.action_cost * (a[0] * a[0] + a[1] * a[1]);
        self.t += 1;
        self.done = self.t >= self.params.horizon;
        Ok((
            Transition {
                state,
                action: a,
                reward,
                cost: 0.0,
                next_state: self.state(),
                done: self.done,
                terminal: false,
            },
            speed,
        ))
    }
}

impl Env for PointMass2D {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = self.params.init_range;
        let pos = if r > 0.0 {
            [rng.random_range(-r..=r), rng.random_range(-r..=r)]
        } else {
            [0.0, 0.0]
        };
        self.reset_to(pos, [0.0, 0.0])
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        self.advance(action).map(|(t, _)| t)
    }
}

/// Parameters of [`ConstrainedPointMass`]: the [`PointMassParams`] fields
/// plus the constraint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstrainedPointMassParams {
    pub goal: [f64; 2],
    pub horizon: usize,
    pub dt: f64,
    pub max_speed: f64,
    pub action_cost: f64,
    pub init_range: f64,
    pub discount: f64,
    /// Speed above which the step cost is 1.
    pub speed_limit: f64,
    /// Bound `d0` on the per-episode constraint statistic.
    pub cost_bound: f64,
    pub cost_convention: CostConvention,
}

impl Default for ConstrainedPointMassParams {
    fn default() -> Self {
        let base = PointMassParams::default();
        Self {
            goal: [2.0, 0.0],
            horizon: base.horizon,
            dt: base.dt,
            max_speed: base.max_speed,
            action_cost: base.action_cost,
            init_range: base.init_range,
            discount: base.discount,
            speed_limit: 1.0,
            cost_bound: 10.0,
            cost_convention: CostConvention::Discounted,
        }
    }
}

impl ConstrainedPointMassParams {
    pub fn base(&self) -> PointMassParams {
        PointMassParams {
            goal: self.goal,
            horizon: self.horizon,
            dt: self.dt,
            max_speed: self.max_speed,
            action_cost: self.action_cost,
            init_range: self.init_range,
            discount: self.discount,
        }
    }
}

/// [`PointMass2D`] with the indicator cost `1[|vel| > speed_limit]`.
#[derive(Clone, Debug)]
pub struct ConstrainedPointMass {
    inner: PointMass2D,
    speed_limit: f64,
    spec: EnvSpec,
}

impl ConstrainedPointMass {
    pub fn new(params: ConstrainedPointMassParams) -> Result<Self> {
        if !(params.cost_bound > 0.0) {
            return Err(Error::config("env.params.cost_bound", "must be > 0"));
        }
        if !(params.speed_limit > 0.0) {
            return Err(Error::config("env.params.speed_limit", "must be > 0"));
        }
        let inner = PointMass2D::new(params.base())?;
        let spec = EnvSpec {
            name: "constrained_point_mass".into(),
            has_cost: true,
            cost_bound: params.cost_bound,
            cost_convention: params.cost_convention,
            ..inner.spec.clone()
        };
        Ok(Self {
            inner,
            speed_limit: params.speed_limit,
            spec,
        })
    }

    pub fn reset_to(&mut self, pos: [f64; 2], vel: [f64; 2]) -> Vec<f64> {
        self.inner.reset_to(pos, vel)
    }
}

impl Env for ConstrainedPointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &[f64]) -> Result<Transition> {
        let (mut t, speed) = self.inner.advance(action)?;
        t.cost = if speed > self.speed_limit { 1.0 } else { 0.0 };
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic_and_in_range() {
        let mut env = PointMass2D::new(PointMassParams::default()).unwrap();
        for seed in 0..50 {
            let s = env.reset(seed);
            assert!(s[0].abs() <= 1.0 && s[1].abs() <= 1.0);
            assert_eq!(&s[2..], &[0.0, 0.0]);
            assert_eq!(env.reset(seed), s);
        }
    }

    #[test]
    fn at_goal_with_zero_action_reward_is_zero() {
        let mut env = PointMass2D::new(PointMassParams::default()).unwrap();
        env.reset_to([0.0, 0.0], [0.0, 0.0]);
        let t = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(t.reward, 0.0);
        assert_eq!(t.cost, 0.0);
    }

    #[test]
    fn actions_are_clipped_and_recorded() {
        let mut env = PointMass2D::new(PointMassParams::default()).unwrap();
        env.reset_to([0.5, 0.5], [0.0, 0.0]);
        let t = env.step(&[3.0, -7.0]).unwrap();
        assert_eq!(t.action, vec![1.0, -1.0]);
        assert!((t.next_state[2] - 0.1).abs() < 1e-15);
        assert!((t.next_state[3] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn speed_is_capped() {
        let mut env = PointMass2D::new(PointMassParams::default()).unwrap();
        env.reset_to([0.0, 0.0], [1.99, 0.0]);
        let t = env.step(&[1.0, 1.0]).unwrap();
        let speed = t.next_state[2].hypot(t.next_state[3]);
        assert!((speed - 2.0).abs() < 1e-12);
    }

    #[test]
    fn episode_times_out_and_step_after_done_fails() {
        let mut env = PointMass2D::new(PointMassParams {
            horizon: 3,
            ..Default::default()
        })
        .unwrap();
        env.reset(0);
        for i in 0..3 {
            let t = env.step(&[0.0, 0.0]).unwrap();
            assert_eq!(t.done, i == 2);
            assert!(!t.terminal);
        }
        assert!(env.step(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn stepping_before_reset_fails() {
        let mut env = PointMass2D::new(PointMassParams::default()).unwrap();
        assert!(env.step(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn speed_indicator_cost() {
        let mut env = ConstrainedPointMass::new(ConstrainedPointMassParams::default()).unwrap();
        env.reset_to([0.0, 0.0], [1.0, 0.0]);
        // exactly at the limit is not a violation
        assert_eq!(env.step(&[0.0, 0.0]).unwrap().cost, 0.0);
        env.reset_to([0.0, 0.0], [0.95, 0.0]);
        assert_eq!(env.step(&[1.0, 0.0]).unwrap().cost, 1.0);
        env.reset_to([0.0, 0.0], [0.5, 0.5]);
        assert_eq!(env.step(&[-1.0, 0.0]).unwrap().cost, 0.0);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(PointMass2D::new(PointMassParams {
            dt: 0.0,
            ..Default::default()
        })
        .is_err());
        assert!(ConstrainedPointMass::new(ConstrainedPointMassParams {
            cost_bound: 0.0,
            ..Default::default()
        })
        .is_err());
    }
}
