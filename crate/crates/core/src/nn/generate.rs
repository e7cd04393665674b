use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::dense::{join, Dense};
use super::param::{HasParams, Param};
use super::{relu_backward, relu_in_place};
use crate::error::{Error, Result};
use crate::math;

/// Parameter-generation alternative to [`super::FcdLayer`]: the full `m x n`
/// weight is emitted by a two-layer generator from a conditioning signal,
/// `W = reshape(W_4 relu(W_3 s + b_3) + b_4)`, and `y = W^T h + b`
/// under the same row-major reshape convention.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedLayer {
    pub gen_hidden: Dense,
    pub gen_out: Dense,
    pub bias: Param,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratedCache {
    signal: Vec<f64>,
    hidden: Vec<f64>,
    weight: Vec<f64>,
    input: Vec<f64>,
}

impl GeneratedCache {
    /// The generated `m x n` matrix.
    pub fn weight(&self) -> &[f64] {
        &self.weight
    }
}

impl GeneratedLayer {
    pub fn new<R: Rng>(name: &str, signal_dim: usize, gen_hidden: usize, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        GeneratedLayer {
            gen_hidden: Dense::new(&join(name, "w3"), signal_dim, gen_hidden, rng),
            gen_out: Dense::new(&join(name, "w4"), gen_hidden, in_dim * out_dim, rng),
            bias: Param::zeros(join(name, "bias"), &[out_dim]),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, signal: &[f64], h: &[f64]) -> Result<(Vec<f64>, GeneratedCache)> {
        if h.len() != self.in_dim {
            return Err(Error::shape("generated layer input", self.in_dim, h.len()));
        }
        let mut hidden = self.gen_hidden.forward(signal)?;
        relu_in_place(&mut hidden);
        let weight = self.gen_out.forward(&hidden)?;
        let n = self.out_dim;
        let mut y = self.bias.value.clone();
        for (i, &hi) in h.iter().enumerate() {
            math::axpy(hi, &weight[i * n..(i + 1) * n], &mut y);
        }
        Ok((y, GeneratedCache { signal: signal.to_vec(), hidden, weight, input: h.to_vec() }))
    }

    pub fn backward(
        &mut self,
        cache: &GeneratedCache,
        dy: &[f64],
        grad_signal: Option<&mut [f64]>,
        grad_h: Option<&mut [f64]>,
    ) -> Result<()> {
        let (m, n) = (self.in_dim, self.out_dim);
        if cache.input.len() != m || cache.weight.len() != m * n || cache.hidden.len() != self.gen_hidden.out_dim {
            return Err(Error::StaleCache("generated-layer cache does not match layer dimensions"));
        }
        if dy.len() != n {
            return Err(Error::shape("generated layer upstream gradient", n, dy.len()));
        }
        math::axpy(1.0, dy, &mut self.bias.grad);
        if let Some(gh) = grad_h {
            if gh.len() != m {
                return Err(Error::shape("generated layer input gradient", m, gh.len()));
            }
            for (i, g) in gh.iter_mut().enumerate() {
                *g += math::dot(&cache.weight[i * n..(i + 1) * n], dy);
            }
        }
        let mut d_weight = vec![0.0; m * n];
        math::outer_acc(&mut d_weight, n, &cache.input, dy);
        let mut d_hidden = vec![0.0; cache.hidden.len()];
        self.gen_out.backward(&cache.hidden, &d_weight, Some(&mut d_hidden))?;
        relu_backward(&cache.hidden, &mut d_hidden);
        self.gen_hidden.backward(&cache.signal, &d_hidden, grad_signal)
    }
}

impl HasParams for GeneratedLayer {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.gen_hidden.visit_params(f);
        self.gen_out.visit_params(f);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.gen_hidden.visit_params_mut(f);
        self.gen_out.visit_params_mut(f);
        f(&mut self.bias);
    }
}
