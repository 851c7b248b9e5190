//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Operations append nodes to a [`Tape`]; [`Tape::backward`] walks them in
//! reverse and returns the gradient of a scalar with respect to every node.

use super::tensor::{matmul, matmul_at, matmul_bt, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Exp(Var),
    Abs(Var),
    Relu(Var),
    Elu(Var),
    Square(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    SumRows(Var),
    Minimum(Var, Var),
    Maximum(Var, Var),
    Clamp(Var, Vec<f64>, Vec<f64>),
    Sum(Var),
    Mean(Var),
    RowBilinear(Var, Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<(), NnError> {
    if a.shape() != b.shape() {
        return Err(NnError::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked")
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A leaf: either a parameter or a constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(NnError::Shape(format!("matmul {:?} x {:?}", av.shape(), bv.shape())));
        }
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        let out = Tensor::new(vec![n, m], matmul(av.data(), bv.data(), n, k, m))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Adds a `[m]` bias to every row of an `[n, m]` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NnError> {
        let (xv, bv) = (self.value(x), self.value(b));
        if xv.shape().len() != 2 || bv.len() != xv.cols() {
            return Err(NnError::Shape(format!("add_bias {:?} + {:?}", xv.shape(), bv.shape())));
        }
        let m = xv.cols();
        let data = xv.data().iter().enumerate().map(|(k, &v)| v + bv.data()[k % m]).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape(self.value(a), self.value(b), "add")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape(self.value(a), self.value(b), "minimum")?;
        let out = zip_map(self.value(a), self.value(b), f64::min);
        Ok(self.push(out, Op::Minimum(a, b)))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        same_shape(self.value(a), self.value(b), "maximum")?;
        let out = zip_map(self.value(a), self.value(b), f64::max);
        Ok(self.push(out, Op::Maximum(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        self.push(out, Op::Exp(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::abs);
        self.push(out, Op::Abs(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { v.exp_m1() });
        self.push(out, Op::Elu(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        self.push(out, Op::Square(x))
    }

    /// Row-wise log-softmax of an `[n, m]` matrix.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(NnError::Shape(format!("log_softmax needs a matrix, got {:?}", xv.shape())));
        }
        let m = xv.cols();
        let mut data = Vec::with_capacity(xv.len());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|&v| v - lse));
        }
        let out = Tensor::new(vec![xv.rows(), m], data)?;
        Ok(self.push(out, Op::LogSoftmax(x)))
    }

    /// Picks column `idx[r]` of each row: `[n, m] -> [n]`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Result<Var, NnError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || idx.len() != xv.rows() || idx.iter().any(|&i| i >= xv.cols()) {
            return Err(NnError::Shape(format!("gather {} indices from {:?}", idx.len(), xv.shape())));
        }
        let data = idx.iter().enumerate().map(|(r, &c)| xv.row(r)[c]).collect();
        let out = Tensor::vector(data);
        Ok(self.push(out, Op::Gather(x, idx)))
    }

    /// `[n, m] -> [n]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var, NnError> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(NnError::Shape(format!("sum_rows needs a matrix, got {:?}", xv.shape())));
        }
        let data = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let out = Tensor::vector(data);
        Ok(self.push(out, Op::SumRows(x)))
    }

    /// Elementwise clamp into constant bounds.
    pub fn clamp(&mut self, x: Var, lo: Vec<f64>, hi: Vec<f64>) -> Result<Var, NnError> {
        let xv = self.value(x);
        if lo.len() != xv.len() || hi.len() != xv.len() {
            return Err(NnError::Shape("clamp bounds length".into()));
        }
        let data = xv.data().iter().zip(lo.iter().zip(&hi)).map(|(&v, (&l, &h))| v.max(l).min(h)).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Clamp(x, lo, hi)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data().iter().sum());
        self.push(out, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::scalar(xv.data().iter().sum::<f64>() / xv.len().max(1) as f64);
        self.push(out, Op::Mean(x))
    }

    /// Per-row vector-matrix product: `q [n, U]` with `w [n, U*E]` viewed as
    /// `n` matrices `[U, E]`, giving `[n, E]`.
    pub fn row_bilinear(&mut self, q: Var, w: Var) -> Result<Var, NnError> {
        let (qv, wv) = (self.value(q), self.value(w));
        let (n, u) = (qv.rows(), qv.cols());
        if qv.shape().len() != 2 || wv.rows() != n || u == 0 || wv.cols() % u != 0 {
            return Err(NnError::Shape(format!("row_bilinear {:?} with {:?}", qv.shape(), wv.shape())));
        }
        let e = wv.cols() / u;
        let mut data = vec![0.0; n * e];
        for r in 0..n {
            let qr = qv.row(r);
            let wr = wv.row(r);
            let out = &mut data[r * e..(r + 1) * e];
            for (k, &qk) in qr.iter().enumerate() {
                for (o, &wk) in out.iter_mut().zip(&wr[k * e..(k + 1) * e]) {
                    *o += qk * wk;
                }
            }
        }
        let out = Tensor::new(vec![n, e], data)?;
        Ok(self.push(out, Op::RowBilinear(q, w)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NnError> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Gradient of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(NnError::NoTape);
        }
        if self.value(loss).len() != 1 {
            return Err(NnError::Shape(format!("backward needs a scalar, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: impl IntoIterator<Item = f64>, len: usize) {
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            for (s, x) in slot.iter_mut().zip(g) {
                *s += x;
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                    let da = matmul_bt(&dy, bv.data(), n, m, k);
                    let db = matmul_at(av.data(), &dy, n, k, m);
                    acc(&mut grads, *a, da, n * k);
                    acc(&mut grads, *b, db, k * m);
                }
                Op::AddBias(x, b) => {
                    let m = y.cols();
                    let mut db = vec![0.0; m];
                    for (k, &g) in dy.iter().enumerate() {
                        db[k % m] += g;
                    }
                    acc(&mut grads, *x, dy.iter().copied(), dy.len());
                    acc(&mut grads, *b, db, m);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, dy.iter().copied(), dy.len());
                    acc(&mut grads, *b, dy.iter().copied(), dy.len());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, dy.iter().copied(), dy.len());
                    acc(&mut grads, *b, dy.iter().map(|g| -g), dy.len());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    acc(&mut grads, *a, dy.iter().zip(bv).map(|(g, x)| g * x), dy.len());
                    acc(&mut grads, *b, dy.iter().zip(av).map(|(g, x)| g * x), dy.len());
                }
                Op::Scale(x, c) => acc(&mut grads, *x, dy.iter().map(|g| g * c), dy.len()),
                Op::Tanh(x) => acc(&mut grads, *x, dy.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)), dy.len()),
                Op::Exp(x) => acc(&mut grads, *x, dy.iter().zip(y.data()).map(|(g, e)| g * e), dy.len()),
                Op::Abs(x) => {
                    let xv = self.value(*x).data();
                    acc(&mut grads, *x, dy.iter().zip(xv).map(|(g, v)| if *v > 0.0 { *g } else if *v < 0.0 { -g } else { 0.0 }), dy.len());
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    acc(&mut grads, *x, dy.iter().zip(xv).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }), dy.len());
                }
                Op::Elu(x) => {
                    let xv = self.value(*x).data();
                    let g = dy.iter().zip(xv.iter().zip(y.data())).map(|(g, (v, out))| if *v > 0.0 { *g } else { g * (out + 1.0) });
                    acc(&mut grads, *x, g, dy.len());
                }
                Op::Square(x) => {
                    let xv = self.value(*x).data();
                    acc(&mut grads, *x, dy.iter().zip(xv).map(|(g, v)| 2.0 * g * v), dy.len());
                }
                Op::LogSoftmax(x) => {
                    let m = y.cols();
                    let mut dx = vec![0.0; dy.len()];
                    for r in 0..y.rows() {
                        let gsum: f64 = dy[r * m..(r + 1) * m].iter().sum();
                        for c in 0..m {
                            let k = r * m + c;
                            dx[k] = dy[k] - y.data()[k].exp() * gsum;
                        }
                    }
                    acc(&mut grads, *x, dx, dy.len());
                }
                Op::Gather(x, idx_cols) => {
                    let xv = self.value(*x);
                    let m = xv.cols();
                    let mut dx = vec![0.0; xv.len()];
                    for (r, &c) in idx_cols.iter().enumerate() {
                        dx[r * m + c] += dy[r];
                    }
                    acc(&mut grads, *x, dx, xv.len());
                }
                Op::SumRows(x) => {
                    let xv = self.value(*x);
                    let m = xv.cols();
                    acc(&mut grads, *x, (0..xv.len()).map(|k| dy[k / m]), xv.len());
                }
                Op::Minimum(a, b) | Op::Maximum(a, b) => {
                    let is_min = matches!(node.op, Op::Minimum(..));
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let pick_a: Vec<bool> = av.iter().zip(bv).map(|(x, z)| if is_min { x <= z } else { x >= z }).collect();
                    acc(&mut grads, *a, dy.iter().zip(&pick_a).map(|(g, &p)| if p { *g } else { 0.0 }), dy.len());
                    acc(&mut grads, *b, dy.iter().zip(&pick_a).map(|(g, &p)| if p { 0.0 } else { *g }), dy.len());
                }
                Op::Clamp(x, lo, hi) => {
                    let xv = self.value(*x).data();
                    let g = dy.iter().enumerate().map(|(k, g)| if xv[k] >= lo[k] && xv[k] <= hi[k] { *g } else { 0.0 });
                    acc(&mut grads, *x, g, dy.len());
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    acc(&mut grads, *x, std::iter::repeat_n(dy[0], n), n);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    let g = dy[0] / n.max(1) as f64;
                    acc(&mut grads, *x, std::iter::repeat_n(g, n), n);
                }
                Op::RowBilinear(q, w) => {
                    let (qv, wv) = (self.value(*q), self.value(*w));
                    let (n, u) = (qv.rows(), qv.cols());
                    let e = wv.cols() / u;
                    let mut dq = vec![0.0; n * u];
                    let mut dw = vec![0.0; n * u * e];
                    for r in 0..n {
                        let dh = &dy[r * e..(r + 1) * e];
                        for k in 0..u {
                            let base = r * u * e + k * e;
                            let wk = &wv.data()[base..base + e];
                            dq[r * u + k] = dh.iter().zip(wk).map(|(a, b)| a * b).sum();
                            let qk = qv.data()[r * u + k];
                            for (d, g) in dw[base..base + e].iter_mut().zip(dh) {
                                *d = g * qk;
                            }
                        }
                    }
                    acc(&mut grads, *q, dq, n * u);
                    acc(&mut grads, *w, dw, n * u * e);
                }
                Op::Reshape(x) => acc(&mut grads, *x, dy.iter().copied(), dy.len()),
            }
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }
}
