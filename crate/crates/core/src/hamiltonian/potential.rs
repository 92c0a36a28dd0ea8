use crate::adcore::{Tape, Tensor, Var};
use crate::critic::{CriticPair, Head};
use crate::envs::{BanditMode, MultiModalBandit};
use crate::error::{Error, Result};

/// A scalar action-value surface `Q(s, a)` that can be differentiated with
/// respect to the action.
pub trait ActionValue {
    /// Values `[n, 1]` recorded on `tape`. Gradients must flow to `actions`.
    fn value_on_tape(&self, tape: &mut Tape, states: Var, actions: Var) -> Result<Var>;

    fn value(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let s = tape.constant(states.clone())?;
        let a = tape.constant(actions.clone())?;
        let q = self.value_on_tape(&mut tape, s, a)?;
        Ok(tape.value(q).clone())
    }

    /// Row-wise `dQ/da`, shape `[n, d]`.
    fn action_grad(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let s = tape.constant(states.clone())?;
        let a = tape.leaf(actions.clone(), true)?;
        let q = self.value_on_tape(&mut tape, s, a)?;
        // rows are independent, so the gradient of the sum is the per-row gradient
        let total = tape.sum(q)?;
        let grads = tape.backward(total)?;
        let g = grads.get_or_zeros(a, actions);
        g.ensure_finite("action_grad")
    }
}

impl<T: ActionValue + ?Sized> ActionValue for &T {
    fn value_on_tape(&self, tape: &mut Tape, states: Var, actions: Var) -> Result<Var> {
        (**self).value_on_tape(tape, states, actions)
    }
}

/// A critic pair read through its configured twin reduction.
#[derive(Clone, Copy, Debug)]
pub struct CriticView<'a> {
    pub critics: &'a CriticPair,
    pub head: Head,
}

impl<'a> CriticView<'a> {
    pub fn new(critics: &'a CriticPair, head: Head) -> Self {
        Self { critics, head }
    }
}

impl ActionValue for CriticView<'_> {
    fn value_on_tape(&self, tape: &mut Tape, states: Var, actions: Var) -> Result<Var> {
        self.critics.estimate_on_tape(tape, states, actions, self.head)
    }
}

/// `Q(s, a) - lambda * Q_C(s, a)`: the return critic penalized by the cost
/// critic.
#[derive(Clone, Copy, Debug)]
pub struct PenalizedView<'a> {
    pub reward: &'a CriticPair,
    pub cost: &'a CriticPair,
    pub lambda: f64,
    pub head: Head,
}

impl ActionValue for PenalizedView<'_> {
    fn value_on_tape(&self, tape: &mut Tape, states: Var, actions: Var) -> Result<Var> {
        let q = self.reward.estimate_on_tape(tape, states, actions, self.head)?;
        if self.lambda == 0.0 {
            return Ok(q);
        }
        let qc = self.cost.estimate_on_tape(tape, states, actions, self.head)?;
        let pen = tape.scale(qc, -self.lambda)?;
        tape.add(q, pen)
    }
}

/// `Q(a) = -(curvature / 2) * |a - center|^2`, independent of the state.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    pub center: Vec<f64>,
    pub curvature: f64,
}

impl ActionValue for Quadratic {
    fn value_on_tape(&self, tape: &mut Tape, _states: Var, actions: Var) -> Result<Var> {
        let shift = tape.constant(Tensor::row(&self.center.iter().map(|c| -c).collect::<Vec<_>>()))?;
        let d = tape.add_row(actions, shift)?;
        let d2 = tape.square(d)?;
        let s = tape.sum_cols(d2)?;
        tape.scale(s, -0.5 * self.curvature)
    }
}

/// `Q(a) = w . a + offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearValue {
    pub weights: Vec<f64>,
    pub offset: f64,
}

impl ActionValue for LinearValue {
    fn value_on_tape(&self, tape: &mut Tape, _states: Var, actions: Var) -> Result<Var> {
        let w = tape.constant(Tensor::matrix(self.weights.len(), 1, self.weights.clone())?)?;
        let q = tape.matmul(actions, w)?;
        tape.add_scalar(q, self.offset)
    }
}

/// Sum of Gaussian bumps, the exact reward surface of [`MultiModalBandit`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBumps {
    pub modes: Vec<BanditMode>,
}

impl GaussianBumps {
    pub fn from_bandit(env: &MultiModalBandit) -> Self {
        Self {
            modes: env.modes().to_vec(),
        }
    }
}

impl ActionValue for GaussianBumps {
    fn value_on_tape(&self, tape: &mut Tape, _states: Var, actions: Var) -> Result<Var> {
        let mut total: Option<Var> = None;
        for m in &self.modes {
            let shift = tape.constant(Tensor::row(&m.center.iter().map(|c| -c).collect::<Vec<_>>()))?;
            let d = tape.add_row(actions, shift)?;
            let d2 = tape.square(d)?;
            let r2 = tape.sum_cols(d2)?;
            let e = tape.scale(r2, -1.0 / (2.0 * m.width * m.width))?;
            let e = tape.exp(e)?;
            let bump = tape.scale(e, m.height)?;
            total = Some(match total {
                None => bump,
                Some(t) => tape.add(t, bump)?,
            });
        }
        total.ok_or_else(|| Error::InvalidArgument("GaussianBumps needs at least one mode".into()))
    }
}

/// The potential `U = -Q / alpha` with kinetic energy `K = (beta0 / 2) |rho|^2`.
#[derive(Clone, Copy, Debug)]
pub struct TargetPotential<'a, P: ?Sized> {
    pub q: &'a P,
    pub alpha: f64,
}

impl<'a, P: ActionValue + ?Sized> TargetPotential<'a, P> {
    pub fn new(q: &'a P, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("temperature must be positive, got {alpha}")));
        }
        Ok(Self { q, alpha })
    }

    /// `U(s, a)` per row.
    pub fn potential(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        Ok(self.q.value(states, actions)?.scale(-1.0 / self.alpha))
    }

    /// `grad_a Q / alpha`, the momentum drift of the conventional integrator.
    pub fn scaled_grad(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        Ok(self.q.action_grad(states, actions)?.scale(1.0 / self.alpha))
    }

    /// `H = U + K` per row.
    pub fn hamiltonian(&self, states: &Tensor, actions: &Tensor, momentum: &Tensor, beta0: f64) -> Result<Tensor> {
        let h = self.potential(states, actions)?.add(&kinetic(momentum, beta0)?)?;
        h.ensure_finite("hamiltonian")
    }
}

/// `(beta0 / 2) * |rho|^2` per row.
pub fn kinetic(momentum: &Tensor, beta0: f64) -> Result<Tensor> {
    if !(beta0 > 0.0 && beta0.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta0 must be positive and finite, got {beta0}")));
    }
    Ok(momentum.map(|r| r * r).sum_cols().scale(0.5 * beta0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts() -> Tensor {
        Tensor::from_rows(&[vec![0.3, -0.2], vec![-0.7, 0.9], vec![0.0, 0.0]]).unwrap()
    }

    fn fd_grad<P: ActionValue>(q: &P, a: &Tensor) -> Tensor {
        let s = Tensor::zeros(a.rows(), 0);
        let h = 1e-6;
        let mut g = Tensor::zeros_like(a);
        for j in 0..a.data().len() {
            let mut up = a.clone();
            let mut dn = a.clone();
            up.data_mut()[j] += h;
            dn.data_mut()[j] -= h;
            let row = j / a.cols();
            let diff = q.value(&s, &up).unwrap().data()[row] - q.value(&s, &dn).unwrap().data()[row];
            g.data_mut()[j] = diff / (2.0 * h);
        }
        g
    }

    #[test]
    fn analytic_gradients() {
        let a = pts();
        let s = Tensor::zeros(3, 0);
        let lin = LinearValue {
            weights: vec![3.0, 4.0],
            offset: 1.0,
        };
        let g = lin.action_grad(&s, &a).unwrap();
        for r in 0..3 {
            assert_eq!(g.row_slice(r), &[3.0, 4.0]);
        }
        let quad = Quadratic {
            center: vec![0.1, 0.2],
            curvature: 2.0,
        };
        let g = quad.action_grad(&s, &a).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                let expect = -2.0 * (a.row_slice(r)[c] - quad.center[c]);
                assert!((g.row_slice(r)[c] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bump_gradient_matches_finite_differences_and_reward() {
        let env = MultiModalBandit::new(Default::default()).unwrap();
        let q = GaussianBumps::from_bandit(&env);
        let a = pts();
        let s = Tensor::zeros(3, 0);
        let v = q.value(&s, &a).unwrap();
        for r in 0..3 {
            assert!((v.data()[r] - env.reward(a.row_slice(r))).abs() < 1e-14);
        }
        let g = q.action_grad(&s, &a).unwrap();
        let fd = fd_grad(&q, &a);
        for (x, y) in g.data().iter().zip(fd.data()) {
            assert!((x - y).abs() < 1e-7, "{x} vs {y}");
        }
    }

    #[test]
    fn hamiltonian_of_oscillator() {
        let q = Quadratic {
            center: vec![0.0],
            curvature: 0.5,
        };
        let t = TargetPotential::new(&q, 0.5).unwrap();
        let s = Tensor::zeros(1, 0);
        // U = a^2 / 2, K = rho^2 / 2
        let h = t.hamiltonian(&s, &Tensor::row(&[2.0]), &Tensor::row(&[1.0]), 1.0).unwrap();
        assert!((h.item().unwrap() - 2.5).abs() < 1e-15);
        assert!(kinetic(&Tensor::row(&[1.0]), f64::INFINITY).is_err());
        assert!(TargetPotential::new(&q, 0.0).is_err());
    }

    #[test]
    fn penalized_view_subtracts_scaled_cost() {
        use crate::critic::Reduce;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let r = CriticPair::new(1, 1, &[4], 0.005, Reduce::Min, &mut rng).unwrap();
        let c = CriticPair::new(1, 1, &[4], 0.005, Reduce::Max, &mut rng).unwrap();
        let s = Tensor::matrix(2, 1, vec![0.1, -0.4]).unwrap();
        let a = Tensor::matrix(2, 1, vec![0.5, 0.2]).unwrap();
        let view = PenalizedView {
            reward: &r,
            cost: &c,
            lambda: 1.5,
            head: Head::Online,
        };
        let v = view.value(&s, &a).unwrap();
        let q = r.estimate(&s, &a, Head::Online).unwrap();
        let qc = c.estimate(&s, &a, Head::Online).unwrap();
        for i in 0..2 {
            assert!((v.data()[i] - (q.data()[i] - 1.5 * qc.data()[i])).abs() < 1e-14);
        }
    }
}
