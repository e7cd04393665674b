use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::param::{HasParams, Param};
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

/// First and second moments keyed by parameter name, so the update of one
/// parameter never depends on which others are stepped alongside it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One Adam update with bias correction for step `step_count` (1-based).
/// L2 decay is folded into the gradient of every non-exempt parameter.
pub fn adam_step<M: HasParams + ?Sized>(
    model: &mut M,
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
    step_count: u64,
) -> Result<()> {
    if step_count == 0 {
        return Err(Error::InvalidArgument("adam step_count is 1-based".into()));
    }
    let t = step_count as f64;
    let c1 = 1.0 - libm::pow(cfg.beta1, t);
    let c2 = 1.0 - libm::pow(cfg.beta2, t);
    let mut failure = None;
    model.visit_params_mut(&mut |p: &mut Param| {
        let (m, v) = state
            .moments
            .entry(p.name.clone())
            .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
        let decay = if p.decay_exempt { 0.0 } else { cfg.weight_decay };
        for i in 0..p.value.len() {
            let g = p.grad[i] + decay * p.value[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            p.value[i] -= lr * (m[i] / c1) / (math::sqrt(v[i] / c2) + cfg.eps);
        }
        if failure.is_none() {
            if let Some(i) = p.first_non_finite() {
                failure = Some(alloc::format!("{}[{}]", p.name, i));
            }
        }
    });
    match failure {
        Some(name) => Err(Error::NonFinite(name)),
        None => Ok(()),
    }
}
