use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};

/// A learnable tensor (1-D or 2-D, row-major) with its gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    /// Excluded from l2 weight decay.
    pub decay_exempt: bool,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Param {
            name: name.into(),
            shape: shape.to_vec(),
            value: vec![0.0; len],
            grad: vec![0.0; len],
            decay_exempt: false,
        }
    }

    /// Uniform in `[-bound, bound)`.
    pub fn uniform<R: Rng>(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let mut p = Param::zeros(name, shape);
        for v in &mut p.value {
            *v = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn exempt_from_decay(mut self) -> Self {
        self.decay_exempt = true;
        self
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.value.iter().position(|v| !v.is_finite())
    }

    /// Overwrites the values, checking the length.
    pub fn load(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.value.len() {
            return Err(Error::shape("param load", self.value.len(), values.len()));
        }
        self.value.copy_from_slice(values);
        Ok(())
    }
}

/// Visitor access to every parameter of a layer or model, in a fixed order.
pub trait HasParams {
    fn visit_params(&self, f: &mut dyn FnMut(&Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    /// All values concatenated in visiting order.
    fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.extend_from_slice(&p.value));
        out
    }

    fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit_params(&mut |p| out.extend_from_slice(&p.grad));
        out
    }

    fn load_flat_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::shape("flat params", self.param_count(), values.len()));
        }
        let mut offset = 0;
        self.visit_params_mut(&mut |p| {
            let n = p.len();
            p.value.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        });
        Ok(())
    }

    /// Name of the first parameter holding a non-finite value.
    fn first_non_finite(&self) -> Option<String> {
        let mut found = None;
        self.visit_params(&mut |p| {
            if found.is_none() {
                if let Some(i) = p.first_non_finite() {
                    found = Some(alloc::format!("{}[{}]", p.name, i));
                }
            }
        });
        found
    }
}

impl HasParams for Param {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(self)
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(self)
    }
}

impl<T: HasParams> HasParams for Vec<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        for x in self {
            x.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for x in self {
            x.visit_params_mut(f);
        }
    }
}
