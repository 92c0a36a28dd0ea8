use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{elu, sigmoid, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Relu => x.map(|v| v.max(0.0)),
            Activation::Elu => x.map(elu),
            Activation::Tanh => x.map(f64::tanh),
            Activation::Sigmoid => x.map(sigmoid),
            Activation::Identity => x.clone(),
        }
    }

    fn apply_on_tape(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Elu => tape.elu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Identity => Ok(x),
        }
    }
}

/// Dense layer computing `x W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Feed-forward network. `sizes = [in, h1, ..., out]`; `hidden` is applied
/// after every layer but the last, `output` after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Linear>,
    hidden: Activation,
    output: Activation,
}

impl Mlp {
    /// Uniform `±1/sqrt(fan_in)` initialization for weights and biases.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidArgument(
                "an MLP needs at least input and output sizes".into(),
            ));
        }
        if sizes[1..].contains(&0) {
            return Err(Error::InvalidArgument(format!("zero-width layer in {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let mut draw = |n: usize| -> Vec<f64> {
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                };
                Linear {
                    weight: Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out)).unwrap(),
                    bias: Tensor::matrix(1, fan_out, draw(fan_out)).unwrap(),
                }
            })
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            layers,
            hidden,
            output,
        })
    }

    /// Builds a network from explicit layers.
    pub fn from_layers(layers: Vec<Linear>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("no layers".into()));
        }
        let mut sizes = vec![layers[0].weight.rows()];
        for l in &layers {
            let (i, o) = l.weight.require_rank2("Mlp::from_layers")?;
            if i != *sizes.last().unwrap() || l.bias.shape() != [1, o] {
                return Err(Error::shape("Mlp::from_layers", "incompatible layer dims"));
            }
            sizes.push(o);
        }
        Ok(Self {
            sizes,
            layers,
            hidden,
            output,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{prefix}.{i}.weight"), &l.weight),
                    (format!("{prefix}.{i}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    /// Eager forward pass, no tape.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (_, cols) = input.require_rank2("Mlp::forward")?;
        if cols != self.input_dim() {
            return Err(Error::shape(
                "Mlp::forward",
                format!("input has {cols} features, net expects {}", self.input_dim()),
            ));
        }
        let last = self.layers.len() - 1;
        let mut x = input.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let z = x.matmul(&l.weight)?.add_row(&l.bias)?;
            let act = if i == last { self.output } else { self.hidden };
            x = act.apply(&z);
        }
        x.ensure_finite("Mlp::forward")
    }

    /// Places the parameters on `tape`. With `trainable = false` they are
    /// constants and the backward sweep skips them.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundMlp> {
        let params = self
            .layers
            .iter()
            .map(|l| {
                Ok((
                    tape.leaf(l.weight.clone(), trainable)?,
                    tape.leaf(l.bias.clone(), trainable)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundMlp {
            params,
            input_dim: self.input_dim(),
            hidden: self.hidden,
            output: self.output,
        })
    }

    /// Overwrites every parameter with `(1 - tau) * self + tau * source`.
    pub fn blend_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        if self.sizes != source.sizes {
            return Err(Error::shape("blend_from", "architectures differ"));
        }
        for (dst, src) in self.params_mut().into_iter().zip(source.params()) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = (1.0 - tau) * *d + tau * s;
            }
        }
        Ok(())
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    params: Vec<(Var, Var)>,
    input_dim: usize,
    hidden: Activation,
    output: Activation,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.input_dim {
            return Err(Error::shape(
                "BoundMlp::forward",
                format!("input has {cols} features, net expects {}", self.input_dim),
            ));
        }
        let last = self.params.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.params.iter().enumerate() {
            let z = tape.matmul(h, w)?;
            let z = tape.add_row(z, b)?;
            let act = if i == last { self.output } else { self.hidden };
            h = act.apply_on_tape(tape, z)?;
        }
        Ok(h)
    }

    /// Parameter handles in [`Mlp::params`] order.
    pub fn param_vars(&self) -> Vec<Var> {
        self.params.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Gradient of a scalar-output network with respect to its input, row by
/// row: `[n, in] -> [n, in]`.
pub fn grad_wrt_input(net: &Mlp, input: &Tensor) -> Result<Tensor> {
    if net.output_dim() != 1 {
        return Err(Error::shape(
            "grad_wrt_input",
            format!("net output dim is {}, need 1", net.output_dim()),
        ));
    }
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, false)?;
    let x = tape.leaf(input.clone(), true)?;
    let y = bound.forward(&mut tape, x)?;
    let total = tape.sum(y)?;
    let grads = tape.backward(total)?;
    Ok(grads.get_or_zeros(x, input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_net() -> Mlp {
        Mlp::from_layers(
            vec![Linear {
                weight: Tensor::matrix(2, 2, vec![1., 0., 0., 1.]).unwrap(),
                bias: Tensor::zeros(1, 2),
            }],
            Activation::Identity,
            Activation::Identity,
        )
        .unwrap()
    }

    #[test]
    fn identity_net_passes_input_through() {
        let y = identity_net().forward(&Tensor::row(&[1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_negative() {
        let net = Mlp::from_layers(
            vec![Linear {
                weight: Tensor::scalar(-1.0),
                bias: Tensor::zeros(1, 1),
            }],
            Activation::Relu,
            Activation::Relu,
        )
        .unwrap();
        assert_eq!(net.forward(&Tensor::row(&[3.0])).unwrap().data(), &[0.0]);
    }

    #[test]
    fn param_count_matches_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[3, 8, 5, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        assert_eq!(net.param_count(), 3 * 8 + 8 + 8 * 5 + 5 + 5 + 1);
    }

    #[test]
    fn input_dim_mismatch_is_error() {
        assert!(identity_net().forward(&Tensor::row(&[1.0])).is_err());
    }

    #[test]
    fn linear_input_gradient() {
        let net = Mlp::from_layers(
            vec![Linear {
                weight: Tensor::matrix(2, 1, vec![2.0, 3.0]).unwrap(),
                bias: Tensor::scalar(0.5),
            }],
            Activation::Identity,
            Activation::Identity,
        )
        .unwrap();
        let x = Tensor::from_rows(&[vec![0.1, 9.0], vec![-4.0, 2.0]]).unwrap();
        let g = grad_wrt_input(&net, &x).unwrap();
        assert_eq!(g.data(), &[2.0, 3.0, 2.0, 3.0]);
    }

    #[test]
    fn grad_wrt_input_rejects_vector_output() {
        assert!(grad_wrt_input(&identity_net(), &Tensor::row(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn taped_and_eager_forward_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new(&[4, 16, 16, 2], Activation::Elu, Activation::Sigmoid, &mut rng).unwrap();
        let x = Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap();
        let eager = net.forward(&x).unwrap();
        let mut tape = Tape::new();
        let b = net.bind(&mut tape, true).unwrap();
        let xv = tape.constant(x).unwrap();
        let y = b.forward(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y), &eager);
    }
}
