use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::dense::{join, Dense};
use super::param::{HasParams, Param};
use super::{relu_backward, relu_in_place};
use crate::error::{Error, Result};
use crate::math;

/// `a = softmax(W_2 relu(W_1 x + b_1) + b_2)`.
///
/// With `heads > 1` the second layer emits `heads * d` logits and each block
/// of `d` is normalised on its own, giving one attention vector per head.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaNet {
    pub l1: Dense,
    pub l2: Dense,
    pub d: usize,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct MetaCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    attention: Vec<f64>,
}

impl MetaCache {
    pub fn attention(&self) -> &[f64] {
        &self.attention
    }
}

impl MetaNet {
    pub fn new<R: Rng>(name: &str, in_dim: usize, hidden: usize, d: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if d == 0 || heads == 0 {
            return Err(Error::config("d", "attention dimension and head count must be positive"));
        }
        Ok(MetaNet {
            l1: Dense::new(&join(name, "l1"), in_dim, hidden, rng),
            l2: Dense::new(&join(name, "l2"), hidden, d * heads, rng),
            d,
            heads,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.l1.in_dim
    }

    /// Returns the concatenated attention vectors (`heads * d`).
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MetaCache)> {
        let mut hidden = self.l1.forward(x)?;
        relu_in_place(&mut hidden);
        let logits = self.l2.forward(&hidden)?;
        let mut attention = Vec::with_capacity(logits.len());
        for block in logits.chunks(self.d) {
            attention.extend(math::softmax(block));
        }
        Ok((attention.clone(), MetaCache { input: x.to_vec(), hidden, attention }))
    }

    pub fn backward(&mut self, cache: &MetaCache, grad_a: &[f64], grad_x: Option<&mut [f64]>) -> Result<()> {
        if cache.attention.len() != self.d * self.heads || cache.hidden.len() != self.l1.out_dim {
            return Err(Error::StaleCache("meta cache does not match network dimensions"));
        }
        if grad_a.len() != cache.attention.len() {
            return Err(Error::shape("meta attention gradient", cache.attention.len(), grad_a.len()));
        }
        let mut d_logits = vec![0.0; grad_a.len()];
        for ((dl, a), g) in d_logits
            .chunks_mut(self.d)
            .zip(cache.attention.chunks(self.d))
            .zip(grad_a.chunks(self.d))
        {
            let inner = math::dot(a, g);
            for j in 0..dl.len() {
                dl[j] = a[j] * (g[j] - inner);
            }
        }
        let mut d_hidden = vec![0.0; cache.hidden.len()];
        self.l2.backward(&cache.hidden, &d_logits, Some(&mut d_hidden))?;
        relu_backward(&cache.hidden, &mut d_hidden);
        self.l1.backward(&cache.input, &d_hidden, grad_x)
    }
}

impl HasParams for MetaNet {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        self.l1.visit_params(f);
        self.l2.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.l1.visit_params_mut(f);
        self.l2.visit_params_mut(f);
    }
}
