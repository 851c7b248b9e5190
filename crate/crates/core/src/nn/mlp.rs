use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tape::{Tape, Var};
use super::tensor::{matmul, Tensor};
use super::NnError;

/// Fully connected network: tanh hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub params: ParamSet,
}

/// `rows x cols` matrix with orthonormal rows or columns, scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    // Gram-Schmidt over the longer dimension's vectors of the shorter one.
    let (n, d) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            // Column vectors when tall, row vectors when wide.
            out[r * cols + c] = gain * if rows >= cols { basis[c][r] } else { basis[r][c] };
        }
    }
    out
}

impl Mlp {
    /// Orthogonal weights, zero biases; `out_gain` scales the final layer.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden_gain: f64, out_gain: f64, rng: &mut R) -> Result<Self, NnError> {
        Self::build(sizes, |k, rows, cols| {
            let gain = if k + 2 == sizes.len() { out_gain } else { hidden_gain };
            orthogonal(rows, cols, gain, rng)
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self, NnError> {
        Self::build(sizes, |_, rows, cols| vec![0.0; rows * cols])
    }

    fn build(sizes: &[usize], mut weights: impl FnMut(usize, usize, usize) -> Vec<f64>) -> Result<Self, NnError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnError::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        let mut params = ParamSet::new();
        for (k, w) in sizes.windows(2).enumerate() {
            params.push(format!("layer{k}.weight"), Tensor::new(vec![w[0], w[1]], weights(k, w[0], w[1]))?);
            params.push(format!("layer{k}.bias"), Tensor::zeros(vec![w[1]]));
        }
        Ok(Self { sizes: sizes.to_vec(), params })
    }

    /// Rebuilds a network from a parameter set, checking the layout.
    pub fn from_params(sizes: &[usize], params: ParamSet) -> Result<Self, NnError> {
        let template = Self::zeros(sizes)?;
        if !template.params.same_layout(&params) {
            return Err(NnError::Shape(format!("parameters do not match layer sizes {sizes:?}")));
        }
        Ok(Self { sizes: sizes.to_vec(), params })
    }

    /// Rebuilds a network whose layer sizes are read off the weight shapes.
    pub fn from_layout(params: ParamSet) -> Result<Self, NnError> {
        let mut sizes = Vec::new();
        for p in params.iter().filter(|p| p.name.ends_with(".weight")) {
            let shape = p.value.shape();
            if shape.len() != 2 {
                return Err(NnError::Shape(format!("`{}` is not a matrix", p.name)));
            }
            if sizes.is_empty() {
                sizes.push(shape[0]);
            }
            sizes.push(shape[1]);
        }
        Self::from_params(&sizes, params)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Batched forward pass without recording: `[n, in] -> [n, out]`.
    pub fn forward_batch(&self, input: &Tensor) -> Result<Tensor, NnError> {
        if input.shape().len() != 2 || input.cols() != self.input_dim() {
            return Err(NnError::Shape(format!(
                "network expects [n, {}] input, got {:?}",
                self.input_dim(),
                input.shape()
            )));
        }
        let n = input.rows();
        let mut h = input.data().to_vec();
        for k in 0..self.layers() {
            let w = &self.params.get(2 * k).value;
            let b = &self.params.get(2 * k + 1).value;
            let (din, dout) = (self.sizes[k], self.sizes[k + 1]);
            let mut z = matmul(&h, w.data(), n, din, dout);
            for row in z.chunks_mut(dout) {
                row.iter_mut().zip(b.data()).for_each(|(v, bb)| *v += bb);
                if k + 1 < self.layers() {
                    row.iter_mut().for_each(|v| *v = v.tanh());
                }
            }
            h = z;
        }
        Tensor::new(vec![n, self.output_dim()], h)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let x = Tensor::new(vec![1, input.len()], input.to_vec())?;
        Ok(self.forward_batch(&x)?.into_data())
    }

    /// Recorded forward pass; `vars` come from `self.params.bind(tape)`.
    pub fn forward_on(&self, tape: &mut Tape, vars: &[Var], input: Var) -> Result<Var, NnError> {
        if tape.value(input).cols() != self.input_dim() {
            return Err(NnError::Shape(format!(
                "network expects {} inputs, got {:?}",
                self.input_dim(),
                tape.value(input).shape()
            )));
        }
        let mut h = input;
        for k in 0..self.layers() {
            let z = tape.matmul(h, vars[2 * k])?;
            h = tape.add_bias(z, vars[2 * k + 1])?;
            if k + 1 < self.layers() {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn affine_single_unit() {
        let mut net = Mlp::zeros(&[1, 1]).unwrap();
        net.params.set_flat_values(&[2.0, 1.0]).unwrap();
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn orthogonal_columns() {
        let mut rng = rng_from_seed(3);
        let w = orthogonal(6, 3, 1.0, &mut rng);
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = (0..6).map(|r| w[r * 3 + a] * w[r * 3 + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn matches_reference_forward() {
        let mut rng = rng_from_seed(9);
        let net = Mlp::new(&[4, 6, 5, 3], 2f64.sqrt(), 0.5, &mut rng).unwrap();
        let x = [0.2, -0.4, 1.3, 0.0];

        // Straightforward per-neuron evaluation.
        let mut h = x.to_vec();
        let n_layers = net.sizes().len() - 1;
        for k in 0..n_layers {
            let w = net.params.get(2 * k).value.clone();
            let b = net.params.get(2 * k + 1).value.clone();
            let (din, dout) = (w.shape()[0], w.shape()[1]);
            let mut z = vec![0.0; dout];
            for (j, zj) in z.iter_mut().enumerate() {
                let mut acc = b.data()[j];
                for (i, hi) in h.iter().enumerate().take(din) {
                    acc += hi * w.data()[i * dout + j];
                }
                *zj = if k + 1 < n_layers { acc.tanh() } else { acc };
            }
            h = z;
        }
        let got = net.forward(&x).unwrap();
        for (a, b) in got.iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut tape = Tape::new();
        let vars = net.params.bind(&mut tape);
        let input = tape.leaf(Tensor::new(vec![1, 4], x.to_vec()).unwrap());
        let out = net.forward_on(&mut tape, &vars, input).unwrap();
        assert_eq!(tape.value(out).data(), got.as_slice());
    }

    #[test]
    fn input_shape_checked() {
        let net = Mlp::zeros(&[3, 2]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(NnError::Shape(_))));
    }
}
