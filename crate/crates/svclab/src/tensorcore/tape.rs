//! Eager reverse-mode differentiation on a flat tape.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the tape in reverse and accumulates gradients. Parameters are
//! registered with [`Tape::param`] so their gradients can be collected into a
//! [`Grads`] map afterwards; the same parameter may participate several times
//! in one tape (its gradients sum).

use std::collections::BTreeMap;

use super::mlp::Param;
use super::TensorError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    /// y[m,n] = x[m,k] · w[n,k]ᵀ + b[1,n]
    Linear { x: Var, w: Var, b: Var },
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Square(Var),
    Abs(Var),
    Exp(Var),
    Ln(Var),
    MeanAll(Var),
    SumAll(Var),
    ConcatCols(Var, Var),
    BroadcastRow(Var),
    Clamp(Var, f64, f64),
    MinElem(Var, Var),
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    grad: Vec<f64>,
    /// Set for `Op::Param` nodes: the identity used to collect grads.
    param_id: Option<u64>,
}

/// Gradients keyed by parameter id, as collected from one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Grads {
    by_id: BTreeMap<u64, Vec<f64>>,
}

impl Grads {
    pub fn get(&self, id: u64) -> Option<&[f64]> {
        self.by_id.get(&id).map(|v| v.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    fn add(&mut self, id: u64, grad: &[f64]) {
        let slot = self.by_id.entry(id).or_insert_with(|| vec![0.0; grad.len()]);
        for (s, g) in slot.iter_mut().zip(grad) {
            *s += g;
        }
    }
}

/// Shared affine kernel: `out[i,j] = Σ_t x[i,t]·w[j,t] + b[j]`.
///
/// Both the tape op and the tape-free [`super::Mlp::eval`] path call this, so
/// the two routes produce bit-identical values.
pub(crate) fn linear_forward(
    x: &[f64],
    m: usize,
    k: usize,
    w: &[f64],
    n: usize,
    b: &[f64],
    out: &mut [f64],
) {
    debug_assert_eq!(x.len(), m * k);
    debug_assert_eq!(w.len(), n * k);
    debug_assert_eq!(b.len(), n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let xi = &x[i * k..(i + 1) * k];
        let oi = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let wj = &w[j * k..(j + 1) * k];
            let mut acc = b[j];
            for t in 0..k {
                acc += xi[t] * wj[t];
            }
            oi[j] = acc;
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn value_scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert!(n.rows == 1 && n.cols == 1, "value_scalar on non-scalar node");
        n.values[0]
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    pub fn rows(&self, v: Var) -> usize {
        self.nodes[v.0].rows
    }

    pub fn cols(&self, v: Var) -> usize {
        self.nodes[v.0].cols
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, values: Vec<f64>) -> Var {
        debug_assert_eq!(values.len(), rows * cols);
        let grad = vec![0.0; values.len()];
        self.nodes.push(Node { op, rows, cols, values, grad, param_id: None });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, values: &[f64], rows: usize, cols: usize) -> Var {
        assert_eq!(values.len(), rows * cols, "leaf shape mismatch");
        self.push(Op::Leaf, rows, cols, values.to_vec())
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(Op::Leaf, 1, 1, vec![v])
    }

    /// Registers a trainable parameter; its gradient can be recovered from
    /// [`Tape::param_grads`] after a backward pass.
    pub fn param(&mut self, p: &Param) -> Var {
        let (rows, cols) = p.dims();
        let v = self.push(Op::Param, rows, cols, p.tensor.values.clone());
        self.nodes[v.0].param_id = Some(p.id());
        v
    }

    /// Registers parameter values as a constant: gradients flow *through* the
    /// op but are not collected for the parameter itself.
    pub fn frozen(&mut self, p: &Param) -> Var {
        let (rows, cols) = p.dims();
        self.push(Op::Leaf, rows, cols, p.tensor.values.clone())
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (m, k) = (self.rows(x), self.cols(x));
        let (n, kw) = (self.rows(w), self.cols(w));
        assert_eq!(k, kw, "linear: input width {k} vs weight width {kw}");
        assert_eq!(self.nodes[b.0].values.len(), n, "linear: bias width");
        let mut out = vec![0.0; m * n];
        linear_forward(
            &self.nodes[x.0].values,
            m,
            k,
            &self.nodes[w.0].values,
            n,
            &self.nodes[b.0].values,
            &mut out,
        );
        self.push(Op::Linear { x, w, b }, m, n, out)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = (self.rows(x), self.cols(x));
        let vals = self.nodes[x.0].values.iter().map(|&v| f(v)).collect();
        self.push(op, r, c, vals)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), |v| v.max(0.0) + (-v.abs()).exp().ln_1p())
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, Op::Ln(x), f64::ln)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x, c), |v| v + c)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (r, c) = (self.rows(a), self.cols(a));
        assert_eq!(
            (r, c),
            (self.rows(b), self.cols(b)),
            "elementwise op on mismatched shapes"
        );
        let vals = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(op, r, c, vals)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn min_elem(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::MinElem(a, b), f64::min)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.nodes[x.0].values.len() as f64;
        let s: f64 = self.nodes[x.0].values.iter().sum();
        self.push(Op::MeanAll(x), 1, 1, vec![s / n])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].values.iter().sum();
        self.push(Op::SumAll(x), 1, 1, vec![s])
    }

    /// Concatenates two matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (m, ca) = (self.rows(a), self.cols(a));
        let (mb, cb) = (self.rows(b), self.cols(b));
        assert_eq!(m, mb, "concat_cols: row mismatch");
        let mut vals = Vec::with_capacity(m * (ca + cb));
        for i in 0..m {
            vals.extend_from_slice(&self.nodes[a.0].values[i * ca..(i + 1) * ca]);
            vals.extend_from_slice(&self.nodes[b.0].values[i * cb..(i + 1) * cb]);
        }
        self.push(Op::ConcatCols(a, b), m, ca + cb, vals)
    }

    /// Tiles a `[1,n]` row into `[m,n]`.
    pub fn broadcast_row(&mut self, x: Var, m: usize) -> Var {
        assert_eq!(self.rows(x), 1, "broadcast_row expects a single row");
        let n = self.cols(x);
        let row = self.nodes[x.0].values.clone();
        let mut vals = Vec::with_capacity(m * n);
        for _ in 0..m {
            vals.extend_from_slice(&row);
        }
        self.push(Op::BroadcastRow(x), m, n, vals)
    }

    /// Reverse pass from a scalar loss. Node and parameter gradients
    /// accumulate: run [`Tape::param_grads`] to collect the latter.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let ln = &self.nodes[loss.0];
        if ln.rows != 1 || ln.cols != 1 {
            return Err(TensorError::NonScalarLoss { rows: ln.rows, cols: ln.cols });
        }
        self.nodes[loss.0].grad[0] += 1.0;
        for idx in (0..=loss.0).rev() {
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf | Op::Param => {}
                Op::Linear { x, w, b } => self.backward_linear(idx, x, w, b),
                Op::Tanh(x) => self.unary_backward(idx, x, |y, _| 1.0 - y * y),
                Op::Relu(x) => self.unary_backward(idx, x, |_, v| if v > 0.0 { 1.0 } else { 0.0 }),
                Op::Sigmoid(x) => self.unary_backward(idx, x, |y, _| y * (1.0 - y)),
                Op::Softplus(x) => {
                    self.unary_backward(idx, x, |_, v| 1.0 / (1.0 + (-v).exp()))
                }
                Op::Add(a, b) => {
                    self.accumulate(idx, a, 1.0);
                    self.accumulate(idx, b, 1.0);
                }
                Op::Sub(a, b) => {
                    self.accumulate(idx, a, 1.0);
                    self.accumulate(idx, b, -1.0);
                }
                Op::Mul(a, b) => {
                    let g = self.nodes[idx].grad.clone();
                    let bv = self.nodes[b.0].values.clone();
                    for (slot, (gi, bi)) in
                        self.nodes[a.0].grad.iter_mut().zip(g.iter().zip(&bv))
                    {
                        *slot += gi * bi;
                    }
                    let av = self.nodes[a.0].values.clone();
                    for (slot, (gi, ai)) in
                        self.nodes[b.0].grad.iter_mut().zip(g.iter().zip(&av))
                    {
                        *slot += gi * ai;
                    }
                }
                Op::Scale(x, c) => self.accumulate(idx, x, c),
                Op::AddScalar(x, _) => self.accumulate(idx, x, 1.0),
                Op::Square(x) => self.unary_backward(idx, x, |_, v| 2.0 * v),
                Op::Abs(x) => self.unary_backward(idx, x, |_, v| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }),
                Op::Exp(x) => self.unary_backward(idx, x, |y, _| y),
                Op::Ln(x) => self.unary_backward(idx, x, |_, v| 1.0 / v),
                Op::MeanAll(x) => {
                    let g = self.nodes[idx].grad[0] / self.nodes[x.0].values.len() as f64;
                    for slot in self.nodes[x.0].grad.iter_mut() {
                        *slot += g;
                    }
                }
                Op::SumAll(x) => {
                    let g = self.nodes[idx].grad[0];
                    for slot in self.nodes[x.0].grad.iter_mut() {
                        *slot += g;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let m = self.nodes[idx].rows;
                    let ca = self.nodes[a.0].cols;
                    let cb = self.nodes[b.0].cols;
                    let g = self.nodes[idx].grad.clone();
                    for i in 0..m {
                        for j in 0..ca {
                            self.nodes[a.0].grad[i * ca + j] += g[i * (ca + cb) + j];
                        }
                        for j in 0..cb {
                            self.nodes[b.0].grad[i * cb + j] += g[i * (ca + cb) + ca + j];
                        }
                    }
                }
                Op::BroadcastRow(x) => {
                    let m = self.nodes[idx].rows;
                    let n = self.nodes[idx].cols;
                    let g = self.nodes[idx].grad.clone();
                    for i in 0..m {
                        for j in 0..n {
                            self.nodes[x.0].grad[j] += g[i * n + j];
                        }
                    }
                }
                Op::Clamp(x, lo, hi) => self.unary_backward(idx, x, move |_, v| {
                    if v > lo && v < hi {
                        1.0
                    } else {
                        0.0
                    }
                }),
                Op::MinElem(a, b) => {
                    let g = self.nodes[idx].grad.clone();
                    let av = self.nodes[a.0].values.clone();
                    let bv = self.nodes[b.0].values.clone();
                    for (t, gi) in g.iter().enumerate() {
                        if av[t] <= bv[t] {
                            self.nodes[a.0].grad[t] += gi;
                        } else {
                            self.nodes[b.0].grad[t] += gi;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// dL/dparent += dL/dself · local, where local depends on (out, in) values.
    fn unary_backward(&mut self, idx: usize, x: Var, local: impl Fn(f64, f64) -> f64) {
        let g = self.nodes[idx].grad.clone();
        let y = self.nodes[idx].values.clone();
        let xv = self.nodes[x.0].values.clone();
        for (t, slot) in self.nodes[x.0].grad.iter_mut().enumerate() {
            *slot += g[t] * local(y[t], xv[t]);
        }
    }

    fn accumulate(&mut self, idx: usize, x: Var, factor: f64) {
        let g = self.nodes[idx].grad.clone();
        for (slot, gi) in self.nodes[x.0].grad.iter_mut().zip(&g) {
            *slot += factor * gi;
        }
    }

    fn backward_linear(&mut self, idx: usize, x: Var, w: Var, b: Var) {
        let (m, n) = (self.nodes[idx].rows, self.nodes[idx].cols);
        let k = self.nodes[x.0].cols;
        let g = self.nodes[idx].grad.clone();
        let wv = self.nodes[w.0].values.clone();
        let xv = self.nodes[x.0].values.clone();
        // dx[i,t] += Σ_j g[i,j]·w[j,t]
        for i in 0..m {
            for j in 0..n {
                let gij = g[i * n + j];
                if gij == 0.0 {
                    continue;
                }
                for t in 0..k {
                    self.nodes[x.0].grad[i * k + t] += gij * wv[j * k + t];
                }
            }
        }
        // dw[j,t] += Σ_i g[i,j]·x[i,t]; db[j] += Σ_i g[i,j]
        for i in 0..m {
            for j in 0..n {
                let gij = g[i * n + j];
                if gij == 0.0 {
                    continue;
                }
                self.nodes[b.0].grad[j] += gij;
                for t in 0..k {
                    self.nodes[w.0].grad[j * k + t] += gij * xv[i * k + t];
                }
            }
        }
    }

    /// Collects gradients of all registered parameters (summed when a
    /// parameter appears more than once on the tape).
    pub fn param_grads(&self) -> Grads {
        let mut grads = Grads::default();
        for node in &self.nodes {
            if let Some(id) = node.param_id {
                grads.add(id, &node.grad);
            }
        }
        grads
    }
}

/// Mean squared difference: `mean((a - b)²)`.
pub fn mse(tape: &mut Tape, a: Var, b: Var) -> Result<Var, TensorError> {
    check_same_shape(tape, a, b, "mse")?;
    let d = tape.sub(a, b);
    let sq = tape.square(d);
    Ok(tape.mean_all(sq))
}

/// Mean absolute difference: `mean(|a - b|)`.
pub fn l1(tape: &mut Tape, a: Var, b: Var) -> Result<Var, TensorError> {
    check_same_shape(tape, a, b, "l1")?;
    let d = tape.sub(a, b);
    let ab = tape.abs(d);
    Ok(tape.mean_all(ab))
}

/// Least-squares GAN discriminator loss:
/// `½·mean((real − 1)²) + ½·mean(fake²)`.
pub fn lsgan_d(tape: &mut Tape, real: Var, fake: Var) -> Result<Var, TensorError> {
    let r1 = tape.add_scalar(real, -1.0);
    let r2 = tape.square(r1);
    let rm = tape.mean_all(r2);
    let f2 = tape.square(fake);
    let fm = tape.mean_all(f2);
    let rh = tape.scale(rm, 0.5);
    let fh = tape.scale(fm, 0.5);
    Ok(tape.add(rh, fh))
}

/// Least-squares GAN generator loss: `mean((fake − 1)²)`.
pub fn lsgan_g(tape: &mut Tape, fake: Var) -> Result<Var, TensorError> {
    let f1 = tape.add_scalar(fake, -1.0);
    let f2 = tape.square(f1);
    Ok(tape.mean_all(f2))
}

fn check_same_shape(tape: &Tape, a: Var, b: Var, op: &'static str) -> Result<(), TensorError> {
    if tape.rows(a) != tape.rows(b) || tape.cols(a) != tape.cols(b) {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!(
                "{}x{} vs {}x{}",
                tape.rows(a),
                tape.cols(a),
                tape.rows(b),
                tape.cols(b)
            ),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_gradient() {
        // loss = w·x with x = 3 → ∂loss/∂w = 3
        let mut tape = Tape::new();
        let w = tape.leaf(&[2.0], 1, 1);
        let x = tape.leaf(&[3.0], 1, 1);
        let loss = tape.mul(w, x);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w), &[3.0]);
        assert_eq!(tape.grad(x), &[2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(&[1.0, 2.0], 1, 2);
        assert!(matches!(
            tape.backward(a),
            Err(TensorError::NonScalarLoss { rows: 1, cols: 2 })
        ));
    }

    #[test]
    fn mse_of_identical_inputs_is_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(&[1.0, -2.0, 0.5], 1, 3);
        let b = tape.leaf(&[1.0, -2.0, 0.5], 1, 3);
        let loss = mse(&mut tape, a, b).unwrap();
        assert_eq!(tape.value_scalar(loss), 0.0);
    }

    #[test]
    fn lsgan_discriminator_optimum_is_zero() {
        let mut tape = Tape::new();
        let real = tape.leaf(&[1.0, 1.0, 1.0], 1, 3);
        let fake = tape.leaf(&[0.0, 0.0, 0.0], 1, 3);
        let loss = lsgan_d(&mut tape, real, fake).unwrap();
        assert_eq!(tape.value_scalar(loss), 0.0);
    }

    #[test]
    fn lsgan_generator_at_half() {
        let mut tape = Tape::new();
        let fake = tape.leaf(&[0.5, 0.5], 1, 2);
        let loss = lsgan_g(&mut tape, fake).unwrap();
        assert!((tape.value_scalar(loss) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn loss_shape_mismatch_reported() {
        let mut tape = Tape::new();
        let a = tape.leaf(&[1.0, 2.0], 1, 2);
        let b = tape.leaf(&[1.0], 1, 1);
        assert!(matches!(
            mse(&mut tape, a, b),
            Err(TensorError::ShapeMismatch { op: "mse", .. })
        ));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let w = tape.leaf(&[2.0], 1, 1);
        let x = tape.leaf(&[3.0], 1, 1);
        let loss = tape.mul(w, x);
        tape.backward(loss).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w), &[6.0]);
    }
}
