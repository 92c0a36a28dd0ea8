use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// PD controller for the point-mass tasks:
/// `a = clip(-kp * (pos - goal) - kd * vel)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScriptedController {
    pub goal: [f64; 2],
    pub kp: f64,
    pub kd: f64,
}

impl ScriptedController {
    pub fn new(goal: [f64; 2]) -> Self {
        Self { goal, kp: 1.0, kd: 1.5 }
    }

    pub fn act(&self, state: &[f64]) -> Vec<f64> {
        (0..2)
            .map(|i| (-self.kp * (state[i] - self.goal[i]) - self.kd * state[2 + i]).clamp(-1.0, 1.0))
            .collect()
    }
}

/// Uniform actions on `[-1, 1]^d`.
#[derive(Clone, Debug)]
pub struct RandomController {
    pub action_dim: usize,
    pub rng: ChaCha8Rng,
}

impl RandomController {
    pub fn act(&mut self) -> Vec<f64> {
        (0..self.action_dim).map(|_| self.rng.random_range(-1.0..=1.0)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pd_pushes_toward_goal_and_saturates() {
        let c = ScriptedController::new([1.0, 0.0]);
        let a = c.act(&[0.5, 0.0, 0.0, 0.0]);
        assert!(a[0] > 0.0 && a[1] == 0.0);
        assert_eq!(c.act(&[-9.0, 9.0, 0.0, 0.0]), vec![1.0, -1.0]);
        assert_eq!(c.act(&[1.0, 0.0, 0.0, 0.0]), vec![0.0, 0.0]);
    }
}
