use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use super::NnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Accumulated gradient; `None` until the first backward pass.
    #[serde(skip)]
    pub grad: Option<Vec<f64>>,
}

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.push(Param { name: name.into(), value, grad: None });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, k: usize) -> &Param {
        &self.params[k]
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter as a tape leaf, in order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    /// Adds the gradients of `vars` (as returned by [`bind`](Self::bind)) into the grad buffers.
    pub fn accumulate(&mut self, grads: &Gradients, vars: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            let buf = p.grad.get_or_insert_with(|| vec![0.0; p.value.len()]);
            if let Some(g) = grads.get(v) {
                for (b, x) in buf.iter_mut().zip(g) {
                    *b += x;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Gradient buffers flattened in parameter order, zeros where absent.
    pub fn flat_grad(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| match &p.grad {
                Some(g) => g.clone(),
                None => vec![0.0; p.value.len()],
            })
            .collect()
    }

    pub fn set_flat_grad(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.num_scalars() {
            return Err(NnError::Shape(format!("expected {} gradient values, got {}", self.num_scalars(), flat.len())));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.grad = Some(flat[off..off + n].to_vec());
            off += n;
        }
        Ok(())
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.num_scalars() {
            return Err(NnError::Shape(format!("expected {} values, got {}", self.num_scalars(), flat.len())));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// L2 norm of all gradient buffers.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`; returns the pre-clip norm.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.params.iter_mut().filter_map(|p| p.grad.as_mut()) {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
        norm
    }

    /// Order-sensitive fingerprint of the parameter values.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.flat_values() {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        h
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }
}
