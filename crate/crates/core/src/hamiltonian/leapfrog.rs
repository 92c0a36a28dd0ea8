use rand::Rng;

use super::potential::{ActionValue, TargetPotential};
use super::PhasePoint;
use crate::adcore::{Activation, BoundMlp, Mlp, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Lower bound on `|grad Q|` when normalizing.
pub const GRAD_NORM_FLOOR: f64 = 1e-8;

/// Bias that saturates the gate sigmoid to exactly 0 or 1 in `f64`.
const SATURATED_GATE_BIAS: f64 = 1000.0;

/// `-grad / max(|grad|, floor)` row by row.
pub fn normalize_neg_rows(grad: &Tensor) -> Tensor {
    let d = grad.cols();
    let mut out = grad.clone();
    if d == 0 {
        return out;
    }
    for row in out.data_mut().chunks_mut(d) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let inv = -1.0 / norm.max(GRAD_NORM_FLOOR);
        row.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

/// Unit-length ascent direction `g = -grad_a Q / max(|grad_a Q|, 1e-8)`
/// (with the sign convention that momentum moves along `-g`).
pub fn normalized_neg_grad<P: ActionValue + ?Sized>(q: &P, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
    Ok(normalize_neg_rows(&q.action_grad(states, actions)?))
}

/// The learned transform `T` and gate `sigma` of the gated integrator.
///
/// Both take `[state] || a || g` and have one ELU hidden layer; the gate has a
/// sigmoid head so it stays in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedLeapfrogNets {
    pub transform: Mlp,
    pub gate: Mlp,
    include_state: bool,
    state_dim: usize,
    action_dim: usize,
}

impl GatedLeapfrogNets {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: usize,
        include_state: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let input = if include_state { state_dim } else { 0 } + 2 * action_dim;
        let sizes = [input, hidden, action_dim];
        Ok(Self {
            transform: Mlp::new(&sizes, Activation::Elu, Activation::Identity, rng)?,
            gate: Mlp::new(&sizes, Activation::Elu, Activation::Sigmoid, rng)?,
            include_state,
            state_dim,
            action_dim,
        })
    }

    /// Nets with `T = 0` and `sigma = 0` everywhere: every half-step leaves
    /// the momentum unchanged.
    pub fn inert(state_dim: usize, action_dim: usize, hidden: usize, include_state: bool) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut nets = Self::new(state_dim, action_dim, hidden, include_state, &mut rng)?;
        for p in nets.params_mut() {
            p.data_mut().fill(0.0);
        }
        nets.set_gate_bias(-SATURATED_GATE_BIAS);
        Ok(nets)
    }

    /// Forces `sigma = 1` exactly by zeroing the gate's output layer and
    /// saturating its bias; the transform then drops out.
    pub fn open_gate(&mut self) {
        self.set_gate_bias(SATURATED_GATE_BIAS);
    }

    fn set_gate_bias(&mut self, bias: f64) {
        let last = self.gate.layers_mut().last_mut().expect("gate has layers");
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().fill(bias);
    }

    pub fn include_state(&self) -> bool {
        self.include_state
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn input(&self, states: &Tensor, actions: &Tensor, g: &Tensor) -> Result<Tensor> {
        if self.include_state {
            Tensor::concat_cols(&[states, actions, g])
        } else {
            Tensor::concat_cols(&[actions, g])
        }
    }

    /// `(sigma, T)` at `(s, a, g)`.
    pub fn outputs(&self, states: &Tensor, actions: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
        let x = self.input(states, actions, g)?;
        Ok((self.gate.forward(&x)?, self.transform.forward(&x)?))
    }

    /// Half-step drift `-(sigma * g + (1 - sigma) * T)`.
    pub fn drift(&self, states: &Tensor, actions: &Tensor, g: &Tensor) -> Result<Tensor> {
        let (sigma, t) = self.outputs(states, actions, g)?;
        let mixed = sigma.mul(g)?.add(&sigma.map(|s| 1.0 - s).mul(&t)?)?;
        mixed.scale(-1.0).ensure_finite("gated drift")
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.transform.params();
        p.extend(self.gate.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.transform.params_mut();
        p.extend(self.gate.params_mut());
        p
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut p = self.transform.named_params(&format!("{prefix}.transform"));
        p.extend(self.gate.named_params(&format!("{prefix}.gate")));
        p
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundGatedNets> {
        Ok(BoundGatedNets {
            transform: self.transform.bind(tape, trainable)?,
            gate: self.gate.bind(tape, trainable)?,
            include_state: self.include_state,
        })
    }
}

/// [`GatedLeapfrogNets`] placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundGatedNets {
    transform: BoundMlp,
    gate: BoundMlp,
    include_state: bool,
}

impl BoundGatedNets {
    pub fn param_vars(&self) -> Vec<Var> {
        let mut v = self.transform.param_vars();
        v.extend(self.gate.param_vars());
        v
    }

    /// Half-step drift with `g` entering as a constant.
    pub fn drift(&self, tape: &mut Tape, s: Var, a: Var, g: &Tensor) -> Result<Var> {
        let g = tape.constant(g.clone())?;
        let x = if self.include_state {
            tape.concat_cols(&[s, a, g])?
        } else {
            tape.concat_cols(&[a, g])?
        };
        let sigma = self.gate.forward(tape, x)?;
        let t = self.transform.forward(tape, x)?;
        let sg = tape.mul(sigma, g)?;
        let ns = tape.neg(sigma)?;
        let one_minus = tape.add_scalar(ns, 1.0)?;
        let st = tape.mul(one_minus, t)?;
        let mixed = tape.add(sg, st)?;
        tape.neg(mixed)
    }
}

/// Three shears: `rho += (eps/2) f(a)`, `a += eps * rho`, `rho += (eps/2) f(a)`.
pub(crate) fn shear_step(
    pp: &PhasePoint,
    step_size: f64,
    mut drift: impl FnMut(&Tensor) -> Result<Tensor>,
) -> Result<PhasePoint> {
    let mut rho = pp.momentum.clone();
    rho.axpy(0.5 * step_size, &drift(&pp.action)?)?;
    let mut a = pp.action.clone();
    a.axpy(step_size, &rho)?;
    rho.axpy(0.5 * step_size, &drift(&a)?)?;
    PhasePoint::new(a, rho)
}

/// Exact inverse of [`shear_step`], undoing the shears in reverse order.
pub(crate) fn shear_inverse(
    pp: &PhasePoint,
    step_size: f64,
    mut drift: impl FnMut(&Tensor) -> Result<Tensor>,
) -> Result<PhasePoint> {
    let mut rho = pp.momentum.clone();
    rho.axpy(-0.5 * step_size, &drift(&pp.action)?)?;
    let mut a = pp.action.clone();
    a.axpy(-step_size, &rho)?;
    rho.axpy(-0.5 * step_size, &drift(&a)?)?;
    PhasePoint::new(a, rho)
}

fn check_step(step_size: f64) -> Result<()> {
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {step_size}")));
    }
    Ok(())
}

/// One conventional leapfrog step on `U = -Q / alpha` with unit mass.
pub fn conventional_leapfrog_step<P: ActionValue + ?Sized>(
    target: &TargetPotential<'_, P>,
    states: &Tensor,
    pp: &PhasePoint,
    step_size: f64,
) -> Result<PhasePoint> {
    check_step(step_size)?;
    shear_step(pp, step_size, |a| target.scaled_grad(states, a))
}

pub fn conventional_leapfrog_inverse<P: ActionValue + ?Sized>(
    target: &TargetPotential<'_, P>,
    states: &Tensor,
    pp: &PhasePoint,
    step_size: f64,
) -> Result<PhasePoint> {
    check_step(step_size)?;
    shear_inverse(pp, step_size, |a| target.scaled_grad(states, a))
}

/// Drift of the gated integrator at `a`.
pub(crate) fn gated_drift<P: ActionValue + ?Sized>(
    q: &P,
    nets: &GatedLeapfrogNets,
    states: &Tensor,
    actions: &Tensor,
) -> Result<Tensor> {
    let g = normalized_neg_grad(q, states, actions)?;
    nets.drift(states, actions, &g)
}

/// One gated leapfrog step. Only the direction of `grad Q` enters, so the
/// temperature in `target` does not affect the result.
pub fn gated_leapfrog_step<P: ActionValue + ?Sized>(
    target: &TargetPotential<'_, P>,
    nets: &GatedLeapfrogNets,
    states: &Tensor,
    pp: &PhasePoint,
    step_size: f64,
) -> Result<PhasePoint> {
    check_step(step_size)?;
    shear_step(pp, step_size, |a| gated_drift(target.q, nets, states, a))
}

pub fn gated_leapfrog_inverse<P: ActionValue + ?Sized>(
    target: &TargetPotential<'_, P>,
    nets: &GatedLeapfrogNets,
    states: &Tensor,
    pp: &PhasePoint,
    step_size: f64,
) -> Result<PhasePoint> {
    check_step(step_size)?;
    shear_inverse(pp, step_size, |a| gated_drift(target.q, nets, states, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::potential::{kinetic, LinearValue, Quadratic};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one(a: f64, rho: f64) -> PhasePoint {
        PhasePoint::new(Tensor::row(&[a]), Tensor::row(&[rho])).unwrap()
    }

    fn no_state(n: usize) -> Tensor {
        Tensor::zeros(n, 0)
    }

    #[test]
    fn normalized_gradient_examples() {
        let lin = LinearValue {
            weights: vec![3.0, 4.0],
            offset: 0.0,
        };
        let g = normalized_neg_grad(&lin, &no_state(1), &Tensor::row(&[0.2, 0.1])).unwrap();
        assert!((g.data()[0] + 0.6).abs() < 1e-15 && (g.data()[1] + 0.8).abs() < 1e-15);

        let flat = LinearValue {
            weights: vec![0.0, 0.0],
            offset: 1.0,
        };
        let g = normalized_neg_grad(&flat, &no_state(1), &Tensor::row(&[0.2, 0.1])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0]);

        let q = Quadratic {
            center: vec![0.3, -0.1],
            curvature: 1.3,
        };
        let q7 = Quadratic {
            curvature: 7.0 * 1.3,
            ..q.clone()
        };
        let a = Tensor::from_rows(&[vec![0.9, 0.4], vec![-0.5, 0.2]]).unwrap();
        let g1 = normalized_neg_grad(&q, &no_state(2), &a).unwrap();
        let g7 = normalized_neg_grad(&q7, &no_state(2), &a).unwrap();
        for (x, y) in g1.data().iter().zip(g7.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn free_particle() {
        let flat = LinearValue {
            weights: vec![0.0],
            offset: 2.0,
        };
        let t = TargetPotential::new(&flat, 0.2).unwrap();
        let out = conventional_leapfrog_step(&t, &no_state(1), &one(0.3, -0.5), 0.1).unwrap();
        assert!((out.action.data()[0] - 0.25).abs() < 1e-15);
        assert_eq!(out.momentum.data()[0], -0.5);
    }

    #[test]
    fn harmonic_oscillator_returns_after_one_period() {
        // Q = -alpha a^2 / 2 gives U = a^2 / 2: unit frequency, period 2 pi
        let alpha = 0.2;
        let q = Quadratic {
            center: vec![0.0],
            curvature: alpha,
        };
        let t = TargetPotential::new(&q, alpha).unwrap();
        let mut pp = one(1.0, 0.0);
        for _ in 0..63 {
            pp = conventional_leapfrog_step(&t, &no_state(1), &pp, 0.1).unwrap();
        }
        assert!((pp.action.data()[0] - 1.0).abs() < 0.01, "{:?}", pp);
        // one leapfrog step on U = a^2/2 is the linear map
        // [[1 - e^2/2, e], [-e (1 - e^2/4), 1 - e^2/2]]
        let e = 0.1f64;
        let (mut x, mut p) = (1.0f64, 0.0f64);
        for _ in 0..63 {
            let nx = (1.0 - e * e / 2.0) * x + e * p;
            let np = -e * (1.0 - e * e / 4.0) * x + (1.0 - e * e / 2.0) * p;
            x = nx;
            p = np;
        }
        assert!((pp.action.data()[0] - x).abs() < 1e-12);
        assert!((pp.momentum.data()[0] - p).abs() < 1e-12);
    }

    #[test]
    fn momentum_flip_reversibility() {
        let q = Quadratic {
            center: vec![0.2, -0.4],
            curvature: 0.7,
        };
        let t = TargetPotential::new(&q, 0.3).unwrap();
        let s = no_state(1);
        let start = PhasePoint::new(Tensor::row(&[0.5, 0.1]), Tensor::row(&[-0.3, 0.8])).unwrap();
        let back = conventional_leapfrog_step(&t, &s, &start, 0.15).unwrap().flip_momentum();
        let back = conventional_leapfrog_step(&t, &s, &back, 0.15).unwrap().flip_momentum();
        for (x, y) in back.action.data().iter().zip(start.action.data()) {
            assert!((x - y).abs() < 1e-10);
        }
        for (x, y) in back.momentum.data().iter().zip(start.momentum.data()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn open_gate_matches_normalized_gradient_leapfrog() {
        // linear Q: g is the constant -w/|w|, so rho' = rho - eps g and
        // a' = a + eps rho - (eps^2 / 2) g in closed form
        let lin = LinearValue {
            weights: vec![1.0, -2.0],
            offset: 0.0,
        };
        let t = TargetPotential::new(&lin, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut nets = GatedLeapfrogNets::new(1, 2, 8, true, &mut rng).unwrap();
        nets.open_gate();
        let s = Tensor::row(&[0.4]);
        let pp = PhasePoint::new(Tensor::row(&[0.1, 0.2]), Tensor::row(&[0.3, -0.4])).unwrap();
        let eps = 0.2;
        let out = gated_leapfrog_step(&t, &nets, &s, &pp, eps).unwrap();
        let n = 5f64.sqrt();
        let g = [-1.0 / n, 2.0 / n];
        for i in 0..2 {
            let a = pp.action.data()[i] + eps * pp.momentum.data()[i] - 0.5 * eps * eps * g[i];
            let rho = pp.momentum.data()[i] - eps * g[i];
            assert!((out.action.data()[i] - a).abs() < 1e-10);
            assert!((out.momentum.data()[i] - rho).abs() < 1e-10);
        }
    }

    #[test]
    fn inert_nets_drift_freely() {
        let q = Quadratic {
            center: vec![0.0, 0.0],
            curvature: 3.0,
        };
        let t = TargetPotential::new(&q, 0.2).unwrap();
        let nets = GatedLeapfrogNets::inert(0, 2, 4, true).unwrap();
        let pp = PhasePoint::new(Tensor::row(&[0.5, -0.5]), Tensor::row(&[0.1, 0.2])).unwrap();
        let out = gated_leapfrog_step(&t, &nets, &no_state(1), &pp, 0.3).unwrap();
        assert_eq!(out.momentum, pp.momentum);
        assert!((out.action.data()[0] - 0.53).abs() < 1e-15);
        assert!((out.action.data()[1] + 0.44).abs() < 1e-15);
    }

    #[test]
    fn gated_inverse_recovers_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = Quadratic {
            center: vec![0.1, 0.3],
            curvature: 2.0,
        };
        let t = TargetPotential::new(&q, 0.2).unwrap();
        let nets = GatedLeapfrogNets::new(3, 2, 16, true, &mut rng).unwrap();
        let s = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 0.0]]).unwrap();
        let pp = PhasePoint::new(
            Tensor::from_rows(&[vec![0.5, -0.2], vec![0.0, 0.9]]).unwrap(),
            Tensor::from_rows(&[vec![1.0, 0.3], vec![-0.7, 0.1]]).unwrap(),
        )
        .unwrap();
        let fwd = gated_leapfrog_step(&t, &nets, &s, &pp, 0.2).unwrap();
        let back = gated_leapfrog_inverse(&t, &nets, &s, &fwd, 0.2).unwrap();
        assert!(back.action.sub(&pp.action).unwrap().max_abs() < 1e-12);
        assert!(back.momentum.sub(&pp.momentum).unwrap().max_abs() < 1e-12);
        let cback = conventional_leapfrog_inverse(&t, &s, &conventional_leapfrog_step(&t, &s, &pp, 0.2).unwrap(), 0.2)
            .unwrap();
        assert!(cback.action.sub(&pp.action).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn state_input_toggle_changes_net_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let with = GatedLeapfrogNets::new(3, 2, 4, true, &mut rng).unwrap();
        let without = GatedLeapfrogNets::new(3, 2, 4, false, &mut rng).unwrap();
        assert_eq!(with.gate.input_dim(), 7);
        assert_eq!(without.gate.input_dim(), 4);
    }

    #[test]
    fn gate_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nets = GatedLeapfrogNets::new(1, 2, 8, true, &mut rng).unwrap();
        let s = Tensor::matrix(4, 1, vec![5.0, -5.0, 0.0, 1.0]).unwrap();
        let a = Tensor::matrix(4, 2, vec![3.0, -2.0, 0.1, 0.0, -1.0, 1.0, 0.4, 0.4]).unwrap();
        let g = normalize_neg_rows(&a);
        let (sigma, _) = nets.outputs(&s, &a, &g).unwrap();
        assert!(sigma.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn rejects_bad_step_size() {
        let q = Quadratic {
            center: vec![0.0],
            curvature: 1.0,
        };
        let t = TargetPotential::new(&q, 1.0).unwrap();
        assert!(conventional_leapfrog_step(&t, &no_state(1), &one(0.0, 0.0), 0.0).is_err());
        assert!(conventional_leapfrog_step(&t, &no_state(1), &one(0.0, 0.0), f64::NAN).is_err());
    }

    #[test]
    fn oscillator_energy_is_bounded() {
        let q = Quadratic {
            center: vec![0.0],
            curvature: 1.0,
        };
        let t = TargetPotential::new(&q, 1.0).unwrap();
        let s = no_state(1);
        let mut pp = one(1.0, 0.0);
        let h0 = t.potential(&s, &pp.action).unwrap().item().unwrap() + kinetic(&pp.momentum, 1.0).unwrap().item().unwrap();
        for _ in 0..1000 {
            pp = conventional_leapfrog_step(&t, &s, &pp, 0.1).unwrap();
            let h = t.hamiltonian(&s, &pp.action, &pp.momentum, 1.0).unwrap().item().unwrap();
            assert!((h - h0).abs() < 0.01);
        }
    }
}
