//! Hand-differentiated kernels: dense and LSTM layers, dynamic-parameter
//! (FC-D) layers and their meta network, the parameter-generation variant,
//! losses, Adam, and a finite-difference gradient checker.
//!
//! Every layer owns its [`Param`]s. A forward call returns the output plus a
//! cache; the matching backward call *accumulates* into the parameter
//! gradients, so a mini-batch is processed by running forward/backward per
//! sample and stepping once.

mod adam;
mod dense;
mod fcd;
mod generate;
mod gradcheck;
mod loss;
mod lstm;
mod meta;
mod param;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::Dense;
pub use fcd::{FcdCache, FcdLayer, FCD_RESHAPE};
pub use generate::{GeneratedCache, GeneratedLayer};
pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckReport, RESOLVABLE_MAGNITUDE};
pub use loss::{cross_entropy, ortho_penalty, ortho_reg, total_loss};
pub use lstm::{LstmCache, LstmCell};
pub use meta::{MetaCache, MetaNet};
pub use param::{HasParams, Param};

#[inline]
pub(crate) fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the activation output is not positive.
#[inline]
pub(crate) fn relu_backward(activated: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}
