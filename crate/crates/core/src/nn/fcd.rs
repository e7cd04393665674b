use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::dense::join;
use super::param::{HasParams, Param};
use crate::error::{Error, Result};
use crate::math;

/// Fully connected layer with dynamic parameters: the effective weight is
/// `sum_k a_k W_k` for an attention vector `a` supplied per call.
///
/// Reshape convention: basis row `k` holds an `m x n` matrix in row-major
/// order with rows indexing the input, so `y_j = sum_k a_k (sum_i W_k[i, j] h_i + b_k[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcdLayer {
    /// `d x (m*n)`
    pub weight: Param,
    /// `d x n`
    pub bias: Param,
    pub d: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// Reshape tag stored in checkpoints.
pub const FCD_RESHAPE: &str = "row-major-m-by-n-rows-index-input";

#[derive(Debug, Clone)]
pub struct FcdCache {
    a: Vec<f64>,
    input: Vec<f64>,
    /// Per-basis pre-mixture outputs `W_k^T h + b_k`, `d x n`.
    per_basis: Vec<f64>,
}

impl FcdLayer {
    pub fn new<R: Rng>(name: &str, d: usize, in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("d", "FC-D layers need at least one basis matrix"));
        }
        let bound = 1.0 / math::sqrt(in_dim.max(1) as f64);
        Ok(FcdLayer {
            weight: Param::uniform(join(name, "basis_weight"), &[d, in_dim * out_dim], bound, rng).exempt_from_decay(),
            bias: Param::zeros(join(name, "basis_bias"), &[d, out_dim]).exempt_from_decay(),
            d,
            in_dim,
            out_dim,
        })
    }

    /// The `m x n` matrix of basis `k`.
    pub fn basis(&self, k: usize) -> &[f64] {
        let size = self.in_dim * self.out_dim;
        &self.weight.value[k * size..(k + 1) * size]
    }

    pub fn forward(&self, a: &[f64], h: &[f64]) -> Result<(Vec<f64>, FcdCache)> {
        if a.len() != self.d {
            return Err(Error::shape("fcd attention", self.d, a.len()));
        }
        if h.len() != self.in_dim {
            return Err(Error::shape("fcd input", self.in_dim, h.len()));
        }
        let n = self.out_dim;
        let mut per_basis = self.bias.value.clone();
        let mut y = vec![0.0; n];
        for k in 0..self.d {
            let w = self.basis(k);
            let out = &mut per_basis[k * n..(k + 1) * n];
            for (i, &hi) in h.iter().enumerate() {
                if hi != 0.0 {
                    math::axpy(hi, &w[i * n..(i + 1) * n], out);
                }
            }
            math::axpy(a[k], out, &mut y);
        }
        Ok((y, FcdCache { a: a.to_vec(), input: h.to_vec(), per_basis }))
    }

    /// Accumulates basis gradients and adds the attention gradient into
    /// `grad_a` (and the input gradient into `grad_h` when given).
    pub fn backward(&mut self, cache: &FcdCache, dy: &[f64], grad_a: &mut [f64], grad_h: Option<&mut [f64]>) -> Result<()> {
        let (m, n) = (self.in_dim, self.out_dim);
        if cache.a.len() != self.d || cache.input.len() != m || cache.per_basis.len() != self.d * n {
            return Err(Error::StaleCache("fcd cache does not match layer dimensions"));
        }
        if dy.len() != n {
            return Err(Error::shape("fcd upstream gradient", n, dy.len()));
        }
        if grad_a.len() != self.d {
            return Err(Error::shape("fcd attention gradient", self.d, grad_a.len()));
        }
        let mut grad_h = grad_h;
        if let Some(gh) = grad_h.as_deref() {
            if gh.len() != m {
                return Err(Error::shape("fcd input gradient", m, gh.len()));
            }
        }
        let size = m * n;
        let mut scaled = vec![0.0; n];
        for k in 0..self.d {
            grad_a[k] += math::dot(dy, &cache.per_basis[k * n..(k + 1) * n]);
            let ak = cache.a[k];
            for (s, &g) in scaled.iter_mut().zip(dy) {
                *s = ak * g;
            }
            math::axpy(1.0, &scaled, &mut self.bias.grad[k * n..(k + 1) * n]);
            let wg = &mut self.weight.grad[k * size..(k + 1) * size];
            for (i, &hi) in cache.input.iter().enumerate() {
                if hi != 0.0 {
                    math::axpy(hi, &scaled, &mut wg[i * n..(i + 1) * n]);
                }
            }
            if let Some(gh) = grad_h.as_deref_mut() {
                let w = &self.weight.value[k * size..(k + 1) * size];
                for (i, g) in gh.iter_mut().enumerate() {
                    *g += math::dot(&w[i * n..(i + 1) * n], &scaled);
                }
            }
        }
        Ok(())
    }
}

impl HasParams for FcdLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}
