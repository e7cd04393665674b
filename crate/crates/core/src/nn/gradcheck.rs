use alloc::string::String;
use alloc::vec::Vec;

use super::param::HasParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and coordinate of the worst disagreement.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Largest `|analytic - numeric|` over coordinates below
    /// [`RESOLVABLE_MAGNITUDE`].
    pub unresolved_max_abs_err: f64,
    /// Largest relative error over coordinates with `|analytic| + |numeric|`
    /// of at least [`RESOLVABLE_MAGNITUDE`].
    pub resolved_max_rel_err: f64,
}

/// Below this gradient magnitude, f64 central differences at `eps = 1e-5`
/// on an O(1) objective cannot reach a 1e-4 relative error.
pub const RESOLVABLE_MAGNITUDE: f64 = 1e-6;

impl GradCheckReport {
    fn empty() -> Self {
        GradCheckReport {
            max_rel_err: 0.0,
            worst: None,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
            unresolved_max_abs_err: 0.0,
            resolved_max_rel_err: 0.0,
        }
    }

    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if analytic.abs() + numeric.abs() >= RESOLVABLE_MAGNITUDE {
            self.resolved_max_rel_err = self.resolved_max_rel_err.max(err);
        } else {
            self.unresolved_max_abs_err = self.unresolved_max_abs_err.max((analytic - numeric).abs());
        }
        if self.worst.is_none() || err > self.max_rel_err {
            self.max_rel_err = err;
            self.worst = Some((String::from(name), index));
            self.analytic = analytic;
            self.numeric = numeric;
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn central_difference(f: &mut dyn FnMut(f64) -> f64, x: f64, eps: f64) -> Result<f64> {
    let plus = f(x + eps);
    let minus = f(x - eps);
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFinite(alloc::format!("objective at {x} +/- {eps}")));
    }
    Ok((plus - minus) / (2.0 * eps))
}

/// Checks `analytic` against central differences of `f` at `x`.
pub fn grad_check<F>(mut f: F, x: &[f64], analytic: &[f64], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if x.len() != analytic.len() {
        return Err(Error::shape("grad_check analytic gradient", x.len(), analytic.len()));
    }
    let mut point: Vec<f64> = x.to_vec();
    let mut report = GradCheckReport::empty();
    for i in 0..x.len() {
        let numeric = central_difference(
            &mut |v| {
                point[i] = v;
                f(&point)
            },
            x[i],
            eps,
        )?;
        point[i] = x[i];
        report.record("x", i, analytic[i], numeric);
    }
    Ok(report)
}

/// Checks the gradients currently stored in `model` against central
/// differences of `f`, perturbing every coordinate of every parameter.
pub fn grad_check_params<M, F>(model: &mut M, eps: f64, mut f: F) -> Result<GradCheckReport>
where
    M: HasParams + ?Sized,
    F: FnMut(&M) -> f64,
{
    let mut coords: Vec<(String, usize, f64)> = Vec::new();
    model.visit_params(&mut |p| {
        for (i, &g) in p.grad.iter().enumerate() {
            coords.push((p.name.clone(), i, g));
        }
    });
    let mut report = GradCheckReport::empty();
    for (flat, (name, index, analytic)) in coords.iter().enumerate() {
        let original = set_coordinate(model, flat, None);
        let numeric = central_difference(
            &mut |v| {
                set_coordinate(model, flat, Some(v));
                f(model)
            },
            original,
            eps,
        );
        set_coordinate(model, flat, Some(original));
        report.record(name, *index, *analytic, numeric?);
    }
    Ok(report)
}

/// Returns the value at flat coordinate `target`, overwriting it when
/// `replacement` is given.
fn set_coordinate<M: HasParams + ?Sized>(model: &mut M, target: usize, replacement: Option<f64>) -> f64 {
    let mut offset = 0;
    let mut old = f64::NAN;
    model.visit_params_mut(&mut |p| {
        if target >= offset && target < offset + p.len() {
            old = p.value[target - offset];
            if let Some(v) = replacement {
                p.value[target - offset] = v;
            }
        }
        offset += p.len();
    });
    old
}
