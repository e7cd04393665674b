//! Per-session intent inference against the mined intent basis.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{event_frequency, Session, N_EVENT_TYPES};
use crate::error::{Error, Result};
use crate::lda::LdaModel;
use crate::math;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentVector {
    pub scores: Vec<f64>,
}

/// How session intents are derived from event frequencies.
#[derive(Debug, Clone, Copy)]
pub enum IntentInference<'a> {
    /// Cosine similarity to each basic intent.
    Cosine(&'a LdaModel),
    /// `tanh(W v + b)` with `W` row-major `k x 10`.
    Learned { weight: &'a [f64], bias: &'a [f64] },
}

/// Cosine similarity between the session's event frequency and every basic intent.
pub fn infer_cosine(freq: &[f64], basis: &LdaModel) -> Result<IntentVector> {
    if freq.len() != N_EVENT_TYPES {
        return Err(Error::shape("intent frequency", N_EVENT_TYPES, freq.len()));
    }
    let freq_norm = math::norm(freq);
    if freq_norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let scores = basis
        .topic_event
        .iter()
        .map(|t| {
            let tn = math::norm(t);
            if tn == 0.0 {
                Err(Error::ZeroVector)
            } else {
                Ok(math::dot(freq, t) / (freq_norm * tn))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(IntentVector { scores })
}

pub fn infer_learned(freq: &[f64], weight: &[f64], bias: &[f64]) -> Result<IntentVector> {
    if freq.len() != N_EVENT_TYPES {
        return Err(Error::shape("intent frequency", N_EVENT_TYPES, freq.len()));
    }
    let k = bias.len();
    if weight.len() != k * N_EVENT_TYPES {
        return Err(Error::shape("learned intent weight", k * N_EVENT_TYPES, weight.len()));
    }
    let mut scores = alloc::vec![0.0; k];
    math::matvec(weight, k, N_EVENT_TYPES, freq, &mut scores);
    for (s, b) in scores.iter_mut().zip(bias) {
        *s = math::tanh(*s + b);
    }
    Ok(IntentVector { scores })
}

pub fn infer(freq: &[f64], method: IntentInference<'_>) -> Result<IntentVector> {
    match method {
        IntentInference::Cosine(basis) => infer_cosine(freq, basis),
        IntentInference::Learned { weight, bias } => infer_learned(freq, weight, bias),
    }
}

/// One intent vector per session, each computed from that session alone.
pub fn intent_sequence(sessions: &[Session], method: IntentInference<'_>) -> Result<Vec<IntentVector>> {
    if sessions.is_empty() {
        return Err(Error::EmptyInput("intent sequence needs at least one session"));
    }
    sessions
        .iter()
        .map(|s| infer(&event_frequency(s)?.freq, method))
        .collect()
}
