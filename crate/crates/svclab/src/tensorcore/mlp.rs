//! Fully-connected networks over the tape, plus the trainable [`Param`] type.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{linear_forward, Grads, Tape, Var};
use super::tensor::Tensor;
use super::TensorError;

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// A trainable tensor with a process-unique identity. Gradients accumulate in
/// `tensor.grad` until [`Param::zero_grad`].
#[derive(Clone, Debug)]
pub struct Param {
    id: u64,
    pub tensor: Tensor,
}

impl Param {
    pub fn new(tensor: Tensor) -> Self {
        Param { id: NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed), tensor }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// (rows, cols) view of the underlying shape; vectors are single rows.
    pub fn dims(&self) -> (usize, usize) {
        match self.tensor.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => panic!("params are at most rank 2, got {s:?}"),
        }
    }

    pub fn len(&self) -> usize {
        self.tensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensor.is_empty()
    }

    pub fn accumulate(&mut self, grad: &[f64]) {
        let g = self.tensor.grad_mut();
        assert_eq!(g.len(), grad.len(), "gradient length mismatch");
        for (slot, gi) in g.iter_mut().zip(grad) {
            *slot += gi;
        }
    }

    pub fn apply_grads(&mut self, grads: &Grads) {
        if let Some(g) = grads.get(self.id) {
            let own = self.tensor.grad_mut();
            for (slot, gi) in own.iter_mut().zip(g) {
                *slot += gi;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensor.zero_grad();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply_slice(&self, xs: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Tanh => xs.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Relu => xs.iter_mut().for_each(|x| {
                if *x < 0.0 {
                    *x = 0.0
                }
            }),
            Activation::Sigmoid => xs.iter_mut().for_each(|x| *x = 1.0 / (1.0 + (-*x).exp())),
        }
    }

    fn apply_tape(&self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Layer widths and activations. `widths` includes the input and output
/// layers, so at least two entries are required.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        MlpSpec { widths, hidden, output }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.widths.len() < 2 {
            return Err(TensorError::InvalidSpec(format!(
                "need at least input and output widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(TensorError::InvalidSpec("zero-width layer".into()));
        }
        if matches!(self.hidden, Activation::Identity | Activation::Sigmoid) {
            return Err(TensorError::InvalidSpec(
                "hidden activation must be tanh or relu".into(),
            ));
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

/// Dense feed-forward network. Weights are `[out, in]` row-major.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// Glorot-uniform weights (±√(6/(fan_in+fan_out))), zero biases.
    pub fn init(spec: MlpSpec, rng: &mut impl Rng) -> Result<Self, TensorError> {
        spec.validate()?;
        let mut layers = Vec::new();
        for win in spec.widths.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let values: Vec<f64> =
                (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
            layers.push(Linear {
                w: Param::new(Tensor::new(vec![fan_out, fan_in], values)),
                b: Param::new(Tensor::zeros(vec![fan_out])),
            });
        }
        Ok(Mlp { spec, layers })
    }

    /// Builds a network from explicit per-layer weights and biases
    /// (`weights[l]` is `[out, in]` row-major). Used by tests and
    /// checkpoint loading.
    pub fn from_weights(
        spec: MlpSpec,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self, TensorError> {
        spec.validate()?;
        let n_layers = spec.widths.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(TensorError::InvalidSpec(format!(
                "expected {n_layers} layers of weights/biases"
            )));
        }
        let mut layers = Vec::new();
        for (l, win) in spec.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (win[0], win[1]);
            if weights[l].len() != fan_in * fan_out || biases[l].len() != fan_out {
                return Err(TensorError::InvalidSpec(format!("layer {l} size mismatch")));
            }
            layers.push(Linear {
                w: Param::new(Tensor::new(vec![fan_out, fan_in], weights[l].clone())),
                b: Param::new(Tensor::new(vec![fan_out], biases[l].clone())),
            });
        }
        Ok(Mlp { spec, layers })
    }

    pub fn in_dim(&self) -> usize {
        self.spec.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.spec.out_dim()
    }

    fn forward_impl(&self, tape: &mut Tape, x: Var, frozen: bool) -> Result<Var, TensorError> {
        if tape.cols(x) != self.in_dim() {
            return Err(TensorError::ShapeMismatch {
                op: "mlp_forward",
                detail: format!("input width {} vs first layer {}", tape.cols(x), self.in_dim()),
            });
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (w, b) = if frozen {
                (tape.frozen(&layer.w), tape.frozen(&layer.b))
            } else {
                (tape.param(&layer.w), tape.param(&layer.b))
            };
            h = tape.linear(h, w, b);
            let act = if l == last { self.spec.output } else { self.spec.hidden };
            h = act.apply_tape(tape, h);
        }
        Ok(h)
    }

    /// Forward pass recording parameters for gradient collection.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        self.forward_impl(tape, x, false)
    }

    /// Forward pass with parameters treated as constants: gradients flow
    /// through to the input but the network itself receives none.
    pub fn forward_frozen(&self, tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
        self.forward_impl(tape, x, true)
    }

    /// Tape-free forward for a single input row. Produces values bit-identical
    /// to [`Mlp::forward`] (both use the same affine kernel).
    pub fn eval(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.in_dim(), "eval input width");
        let mut h = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (n, k) = layer.w.dims();
            let mut out = vec![0.0; n];
            linear_forward(&h, 1, k, &layer.w.tensor.values, n, &layer.b.tensor.values, &mut out);
            let act = if l == last { self.spec.output } else { self.spec.hidden };
            act.apply_slice(&mut out);
            h = out;
        }
        h
    }

    /// Tape-free forward for `rows` stacked input rows.
    pub fn eval_batch(&self, inputs: &[f64], rows: usize) -> Vec<f64> {
        assert_eq!(inputs.len(), rows * self.in_dim(), "eval_batch input size");
        let mut h = inputs.to_vec();
        let mut width = self.in_dim();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (n, k) = layer.w.dims();
            debug_assert_eq!(k, width);
            let mut out = vec![0.0; rows * n];
            linear_forward(&h, rows, k, &layer.w.tensor.values, n, &layer.b.tensor.values, &mut out);
            let act = if l == last { self.spec.output } else { self.spec.hidden };
            act.apply_slice(&mut out);
            h = out;
            width = n;
        }
        h
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Routes tape-collected gradients into this network's parameters.
    pub fn accumulate_grads(&mut self, grads: &Grads) {
        for p in self.params_mut() {
            p.apply_grads(grads);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_outputs_zero() {
        let spec = MlpSpec::new(vec![3, 4, 2], Activation::Tanh, Activation::Identity);
        let mlp = Mlp::from_weights(
            spec,
            vec![vec![0.0; 12], vec![0.0; 8]],
            vec![vec![0.0; 4], vec![0.0; 2]],
        )
        .unwrap();
        assert_eq!(mlp.eval(&[1.0, -2.0, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn single_affine_layer() {
        // W=[[2]], b=[1], input [3] → output [7]
        let spec = MlpSpec::new(vec![1, 1], Activation::Tanh, Activation::Identity);
        let mlp = Mlp::from_weights(spec, vec![vec![2.0]], vec![vec![1.0]]).unwrap();
        assert_eq!(mlp.eval(&[3.0]), vec![7.0]);
    }

    #[test]
    fn taped_forward_matches_eval_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = MlpSpec::new(vec![2, 16, 16, 5], Activation::Tanh, Activation::Identity);
        let mlp = Mlp::init(spec, &mut rng).unwrap();
        let input = [0.3, -1.2];
        let plain = mlp.eval(&input);
        let mut tape = Tape::new();
        let x = tape.leaf(&input, 1, 2);
        let y = mlp.forward(&mut tape, x).unwrap();
        assert_eq!(tape.values(y), plain.as_slice());
    }

    /// Independent straightforward re-evaluation of a 2-16-16-5 tanh net.
    #[test]
    fn forward_matches_independent_reevaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let spec = MlpSpec::new(vec![2, 16, 16, 5], Activation::Tanh, Activation::Identity);
        let mlp = Mlp::init(spec, &mut rng).unwrap();
        let input = [0.7, -0.25];

        // Oracle: re-evaluate from the raw weight arrays, scalar by scalar.
        let mut h: Vec<f64> = input.to_vec();
        for (l, layer) in mlp.layers.iter().enumerate() {
            let (n, k) = layer.w.dims();
            let mut out = Vec::with_capacity(n);
            for j in 0..n {
                let mut acc = layer.b.tensor.values[j];
                for t in 0..k {
                    acc += layer.w.tensor.values[j * k + t] * h[t];
                }
                out.push(if l + 1 < mlp.layers.len() { acc.tanh() } else { acc });
            }
            h = out;
        }

        let got = mlp.eval(&input);
        for (a, b) in got.iter().zip(&h) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn forward_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = MlpSpec::new(vec![2, 4, 1], Activation::Tanh, Activation::Identity);
        let mlp = Mlp::init(spec, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(&[1.0, 2.0, 3.0], 1, 3);
        assert!(matches!(
            mlp.forward(&mut tape, x),
            Err(TensorError::ShapeMismatch { op: "mlp_forward", .. })
        ));
    }

    #[test]
    fn spec_needs_two_widths() {
        let spec = MlpSpec::new(vec![4], Activation::Tanh, Activation::Identity);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn gradients_zero_at_perfect_fit() {
        // loss = mse(identity-net(x), x) → all gradients 0
        let spec = MlpSpec::new(vec![2, 2], Activation::Tanh, Activation::Identity);
        let mlp = Mlp::from_weights(
            spec,
            vec![vec![1.0, 0.0, 0.0, 1.0]],
            vec![vec![0.0, 0.0]],
        )
        .unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(&[0.4, -1.7], 1, 2);
        let y = mlp.forward(&mut tape, x).unwrap();
        let loss = super::super::tape::mse(&mut tape, y, x).unwrap();
        tape.backward(loss).unwrap();
        let grads = tape.param_grads();
        for p in mlp.params() {
            let g = grads.get(p.id()).unwrap();
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let spec = MlpSpec::new(vec![3, 8, 2], Activation::Relu, Activation::Tanh);
        let a = Mlp::init(spec.clone(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = Mlp::init(spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.tensor.values, pb.tensor.values);
        }
    }
}
