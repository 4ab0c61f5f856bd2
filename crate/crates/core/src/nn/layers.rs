use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::{matvec, sigmoid, softplus, Tensor};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Softplus => softplus(x),
        }
    }

    fn on_tape(self, tape: &mut Tape<'_>, v: Var) -> Var {
        match self {
            Activation::Identity => v,
            Activation::Tanh => tape.tanh(v),
            Activation::Sigmoid => tape.sigmoid(v),
            Activation::Softplus => tape.softplus(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Tensor::zeros(outputs, inputs),
            bias: Tensor::zeros(outputs, 1),
        }
    }

    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weights: Tensor::uniform_fan_in(outputs, inputs, inputs, rng),
            bias: Tensor::uniform_fan_in(outputs, 1, inputs, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    /// `W x + b`
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.outputs()];
        matvec(self.weights.as_slice(), self.outputs(), self.inputs(), x, &mut out);
        for (o, b) in out.iter_mut().zip(self.bias.as_slice()) {
            *o += b;
        }
        out
    }
}

/// Multilayer perceptron whose `skips` add the activation of layer `from`
/// to the pre-activation of layer `to`. The activation is applied to every
/// layer except the last, which stays linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualMlp {
    pub layers: Vec<DenseLayer>,
    pub skips: Vec<(usize, usize)>,
    pub activation: Activation,
}

impl ResidualMlp {
    pub fn new(layers: Vec<DenseLayer>, skips: Vec<(usize, usize)>, activation: Activation) -> Result<Self> {
        let net = Self {
            layers,
            skips,
            activation,
        };
        net.validate()?;
        Ok(net)
    }

    /// `inputs -> hidden -> hidden -> hidden -> 1` with skips `(0,1)` and `(1,2)`.
    pub fn energy_default<R: Rng + ?Sized>(inputs: usize, hidden: usize, activation: Activation, rng: &mut R) -> Self {
        let layers = vec![
            DenseLayer::init(inputs, hidden, rng),
            DenseLayer::init(hidden, hidden, rng),
            DenseLayer::init(hidden, hidden, rng),
            DenseLayer::init(hidden, 1, rng),
        ];
        Self {
            layers,
            skips: vec![(0, 1), (1, 2)],
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        for pair in self.layers.windows(2) {
            check_dim("layer chaining", pair[0].outputs(), pair[1].inputs())?;
        }
        for layer in &self.layers {
            check_dim("bias length", layer.outputs(), layer.bias.len())?;
            if !layer.weights.all_finite() || !layer.bias.all_finite() {
                return Err(Error::NumericOverflow("network parameters".into()));
            }
        }
        for &(from, to) in &self.skips {
            if from >= to || to >= self.layers.len() {
                return Err(Error::Config(format!("invalid skip connection ({from}, {to})")));
            }
            check_dim("skip connection", self.layers[to].outputs(), self.layers[from].outputs())?;
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weights, &l.bias])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_dim("mlp input", self.input_size(), input.len())?;
        let last = self.layers.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = if l == 0 { input } else { &acts[l - 1] };
            let mut pre = layer.affine(prev);
            for &(from, to) in &self.skips {
                if to == l {
                    for (p, s) in pre.iter_mut().zip(&acts[from]) {
                        *p += s;
                    }
                }
            }
            if l != last {
                pre.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            if pre.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericOverflow(format!("mlp layer {l}")));
            }
            acts.push(pre);
        }
        Ok(acts.pop().unwrap_or_default())
    }

    /// Scalar output of a single-output network.
    pub fn forward_scalar(&self, input: &[f64]) -> Result<f64> {
        check_dim("mlp output", 1, self.output_size())?;
        Ok(self.forward(input)?[0])
    }

    /// Registers the parameters on `tape` starting at `base_slot`.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, base_slot: usize) -> BoundMlp<'a> {
        let vars = self
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                (
                    tape.param(&layer.weights, base_slot + 2 * l),
                    tape.param(&layer.bias, base_slot + 2 * l + 1),
                )
            })
            .collect();
        BoundMlp { net: self, vars }
    }
}

pub struct BoundMlp<'a> {
    net: &'a ResidualMlp,
    vars: Vec<(Var, Var)>,
}

impl BoundMlp<'_> {
    pub fn forward(&self, tape: &mut Tape<'_>, input: Var) -> Var {
        let last = self.vars.len() - 1;
        let mut acts: Vec<Var> = Vec::with_capacity(self.vars.len());
        for (l, &(w, b)) in self.vars.iter().enumerate() {
            let prev = if l == 0 { input } else { acts[l - 1] };
            let mv = tape.matvec(w, prev);
            let mut pre = tape.add(mv, b);
            for &(from, to) in &self.net.skips {
                if to == l {
                    pre = tape.add(pre, acts[from]);
                }
            }
            let a = if l == last {
                pre
            } else {
                self.net.activation.on_tape(tape, pre)
            };
            acts.push(a);
        }
        acts[last]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = ResidualMlp::energy_default(5, 8, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(0));
        net.parameters_mut().into_iter().for_each(|t| t.fill(0.0));
        assert_eq!(net.forward_scalar(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), 0.0);
    }

    #[test]
    fn single_linear_layer_is_a_dot_product() {
        let layer = DenseLayer {
            weights: Tensor::from_rows(1, 2, vec![1.0, 2.0]).unwrap(),
            bias: Tensor::zeros(1, 1),
        };
        let net = ResidualMlp::new(vec![layer], vec![], Activation::Identity).unwrap();
        assert_eq!(net.forward_scalar(&[3.0, 4.0]).unwrap(), 11.0);
    }

    #[test]
    fn two_layer_net_matches_straight_line_arithmetic() {
        let l0 = DenseLayer {
            weights: Tensor::from_rows(2, 2, vec![0.1, -0.2, 0.3, 0.4]).unwrap(),
            bias: Tensor::vector(vec![0.05, -0.05]),
        };
        let l1 = DenseLayer {
            weights: Tensor::from_rows(1, 2, vec![0.7, -0.6]).unwrap(),
            bias: Tensor::vector(vec![0.2]),
        };
        let net = ResidualMlp::new(vec![l0, l1], vec![], Activation::Tanh).unwrap();
        let (x0, x1) = (0.5, -0.5);
        let h0 = (0.1 * x0 - 0.2 * x1 + 0.05f64).tanh();
        let h1 = (0.3 * x0 + 0.4 * x1 - 0.05f64).tanh();
        let expected = 0.7 * h0 - 0.6 * h1 + 0.2;
        let got = net.forward_scalar(&[x0, x1]).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn skip_adds_source_activation_to_destination_pre_activation() {
        let ident = |n: usize| {
            let mut w = Tensor::zeros(n, n);
            for i in 0..n {
                w.as_mut_slice()[i * n + i] = 1.0;
            }
            DenseLayer {
                weights: w,
                bias: Tensor::zeros(n, 1),
            }
        };
        let head = DenseLayer {
            weights: Tensor::from_rows(1, 2, vec![1.0, 1.0]).unwrap(),
            bias: Tensor::zeros(1, 1),
        };
        let net = ResidualMlp::new(
            vec![ident(2), ident(2), ident(2), head],
            vec![(0, 1), (1, 2)],
            Activation::Identity,
        )
        .unwrap();
        // a0 = x, a1 = x + a0 = 2x, a2 = a1 + a1 = 4x, out = sum(4x)
        assert_eq!(net.forward_scalar(&[1.0, 2.0]).unwrap(), 12.0);
    }

    #[test]
    fn dimension_errors_name_sizes() {
        let net = ResidualMlp::energy_default(3, 4, Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(1));
        let err = net.forward(&[1.0, 2.0]).unwrap_err();
        assert_eq!(
            err,
            Error::Dimension {
                context: "mlp input",
                expected: 3,
                actual: 2
            }
        );
        assert!(ResidualMlp::new(net.layers.clone(), vec![(2, 1)], Activation::Tanh).is_err());
    }

    #[test]
    fn overflow_is_reported() {
        let layer = DenseLayer {
            weights: Tensor::from_rows(1, 1, vec![1e308]).unwrap(),
            bias: Tensor::zeros(1, 1),
        };
        let net = ResidualMlp::new(vec![layer], vec![], Activation::Identity).unwrap();
        assert!(matches!(net.forward(&[1e10]), Err(Error::NumericOverflow(_))));
    }

    #[test]
    fn tape_forward_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = ResidualMlp::energy_default(6, 7, Activation::Softplus, &mut rng);
        let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, 0);
        let xv = tape.constant(x.clone());
        let out = bound.forward(&mut tape, xv);
        assert_eq!(tape.scalar(out).to_bits(), net.forward_scalar(&x).unwrap().to_bits());
    }
}
