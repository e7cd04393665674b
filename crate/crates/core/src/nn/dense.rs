use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::param::{HasParams, Param};
use crate::error::{Error, Result};
use crate::math;

/// `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new<R: Rng>(name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / math::sqrt(in_dim.max(1) as f64);
        Dense {
            weight: Param::uniform(join(name, "weight"), &[out_dim, in_dim], bound, rng),
            bias: Param::zeros(join(name, "bias"), &[out_dim]),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::shape("dense input", self.in_dim, x.len()));
        }
        let mut y = vec![0.0; self.out_dim];
        math::matvec(&self.weight.value, self.out_dim, self.in_dim, x, &mut y);
        for (yi, b) in y.iter_mut().zip(&self.bias.value) {
            *yi += b;
        }
        Ok(y)
    }

    /// Accumulates parameter gradients for upstream `dy`; adds the input
    /// gradient into `dx` when given.
    pub fn backward(&mut self, x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) -> Result<()> {
        if x.len() != self.in_dim {
            return Err(Error::shape("dense input", self.in_dim, x.len()));
        }
        if dy.len() != self.out_dim {
            return Err(Error::shape("dense upstream", self.out_dim, dy.len()));
        }
        math::outer_acc(&mut self.weight.grad, self.in_dim, dy, x);
        math::axpy(1.0, dy, &mut self.bias.grad);
        if let Some(dx) = dx {
            math::matvec_t_acc(&self.weight.value, self.out_dim, self.in_dim, dy, dx);
        }
        Ok(())
    }
}

impl HasParams for Dense {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

pub(crate) fn join(prefix: &str, leaf: &str) -> String {
    if prefix.is_empty() {
        String::from(leaf)
    } else {
        alloc::format!("{prefix}.{leaf}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = Dense::new("d", 5, 3, &mut rng);
        layer.bias.value = vec![0.1, -0.2, 0.3];
        let x: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.5).collect();
        let coef = [0.7, -1.3, 0.4];
        let loss = |l: &Dense| -> f64 {
            let y = l.forward(&x).unwrap();
            y.iter().zip(&coef).map(|(a, c)| c * a * a).sum()
        };
        let y = layer.forward(&x).unwrap();
        let dy: Vec<f64> = y.iter().zip(&coef).map(|(a, c)| 2.0 * c * a).collect();
        layer.zero_grad();
        let mut dx = vec![0.0; 5];
        layer.backward(&x, &dy, Some(&mut dx)).unwrap();
        let report = grad_check_params(&mut layer, 1e-5, loss).unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");

        // input gradient
        let mut worst: f64 = 0.0;
        for i in 0..5 {
            let mut xp = x.clone();
            xp[i] += 1e-5;
            let mut xm = x.clone();
            xm[i] -= 1e-5;
            let f = |v: &[f64]| -> f64 {
                let y = layer.forward(v).unwrap();
                y.iter().zip(&coef).map(|(a, c)| c * a * a).sum()
            };
            let num = (f(&xp) - f(&xm)) / 2e-5;
            worst = worst.max((num - dx[i]).abs() / (num.abs() + dx[i].abs()).max(1e-8));
        }
        assert!(worst < 1e-6);
    }

    #[test]
    fn dense_rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = Dense::new("d", 4, 2, &mut rng);
        assert!(layer.forward(&[1.0; 3]).is_err());
        assert!(layer.backward(&[1.0; 4], &[1.0; 3], None).is_err());
    }
}
