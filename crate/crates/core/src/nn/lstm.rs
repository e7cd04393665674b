use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::dense::join;
use super::param::{HasParams, Param};
use crate::error::{Error, Result};
use crate::math;

/// Single-layer LSTM. Gate blocks are stacked in the order
/// input, forget, cell-candidate, output, each `hidden` wide.
///
/// Weights are stored input-major: row `c` of `w_ih` holds the `4h` gate
/// weights of input `c`, so the gate pre-activations are a sum of scaled rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `in x 4h`
    pub w_ih: Param,
    /// `h x 4h`
    pub w_hh: Param,
    /// `4h`, forget block initialised to +1.
    pub bias: Param,
    pub in_dim: usize,
    pub hidden: usize,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct LstmCache {
    in_dim: usize,
    hidden: usize,
    steps: usize,
    inputs: Vec<f64>,
    /// Activated gates per step, `4h` each.
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    hiddens: Vec<f64>,
}

impl LstmCache {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn last_hidden(&self) -> &[f64] {
        &self.hiddens[(self.steps - 1) * self.hidden..]
    }
}

impl LstmCell {
    pub fn new<R: Rng>(name: &str, in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut bias = Param::zeros(join(name, "bias"), &[4 * hidden]);
        bias.value[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        LstmCell {
            w_ih: Param::uniform(join(name, "w_ih"), &[in_dim, 4 * hidden], 1.0 / math::sqrt(in_dim.max(1) as f64), rng),
            w_hh: Param::uniform(join(name, "w_hh"), &[hidden, 4 * hidden], 1.0 / math::sqrt(hidden.max(1) as f64), rng),
            bias,
            in_dim,
            hidden,
        }
    }

    /// Runs the recurrence from a zero state over `inputs`, a row-major
    /// `T x in_dim` block, and returns `h_T` with the cache.
    pub fn forward(&self, inputs: &[f64]) -> Result<(Vec<f64>, LstmCache)> {
        let (n_in, h) = (self.in_dim, self.hidden);
        if n_in == 0 || inputs.is_empty() || inputs.len() % n_in != 0 {
            return Err(Error::shape("lstm input sequence", n_in, inputs.len()));
        }
        let steps = inputs.len() / n_in;
        let mut gates = vec![0.0; steps * 4 * h];
        let mut cells = vec![0.0; steps * h];
        let mut tanh_cells = vec![0.0; steps * h];
        let mut hiddens = vec![0.0; steps * h];
        let mut z = vec![0.0; 4 * h];

        for t in 0..steps {
            z.copy_from_slice(&self.bias.value);
            math::gemv_t_acc(&self.w_ih.value, &inputs[t * n_in..(t + 1) * n_in], &mut z);
            if t > 0 {
                math::gemv_t_acc(&self.w_hh.value, &hiddens[(t - 1) * h..t * h], &mut z);
            }
            let g_t = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            let (ifg, o) = g_t.split_at_mut(3 * h);
            let (if_, g) = ifg.split_at_mut(2 * h);
            for (a, &v) in if_.iter_mut().zip(&z[..2 * h]) {
                *a = math::sigmoid_vec(v);
            }
            for (a, &v) in g.iter_mut().zip(&z[2 * h..3 * h]) {
                *a = math::tanh_vec(v);
            }
            for (a, &v) in o.iter_mut().zip(&z[3 * h..]) {
                *a = math::sigmoid_vec(v);
            }
            let (before, now) = cells.split_at_mut(t * h);
            let c_prev = if t == 0 { None } else { Some(&before[(t - 1) * h..]) };
            let c_now = &mut now[..h];
            for j in 0..h {
                let carry = c_prev.map_or(0.0, |c| if_[h + j] * c[j]);
                c_now[j] = carry + if_[j] * g[j];
            }
            let tc_now = &mut tanh_cells[t * h..(t + 1) * h];
            for (a, &c) in tc_now.iter_mut().zip(c_now.iter()) {
                *a = math::tanh_vec(c);
            }
            for ((hid, &tc), &og) in hiddens[t * h..(t + 1) * h].iter_mut().zip(tc_now.iter()).zip(o.iter()) {
                *hid = og * tc;
            }
        }

        let cache = LstmCache {
            in_dim: n_in,
            hidden: h,
            steps,
            inputs: inputs.to_vec(),
            gates,
            cells,
            tanh_cells,
            hiddens,
        };
        Ok((cache.last_hidden().to_vec(), cache))
    }

    /// Backpropagation through time from `grad_h_last`. Parameter gradients
    /// accumulate; when `grad_inputs` is given it receives (added) the
    /// `T x in_dim` input gradient.
    pub fn backward(&mut self, cache: &LstmCache, grad_h_last: &[f64], mut grad_inputs: Option<&mut [f64]>) -> Result<()> {
        let (n_in, h) = (self.in_dim, self.hidden);
        if cache.in_dim != n_in || cache.hidden != h {
            return Err(Error::StaleCache("lstm cache was produced by a cell of different shape"));
        }
        if grad_h_last.len() != h {
            return Err(Error::shape("lstm upstream gradient", h, grad_h_last.len()));
        }
        if let Some(gx) = grad_inputs.as_deref() {
            if gx.len() != cache.inputs.len() {
                return Err(Error::shape("lstm input gradient", cache.inputs.len(), gx.len()));
            }
        }

        let g4 = 4 * h;
        let mut dh = grad_h_last.to_vec();
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; g4];
        for t in (0..cache.steps).rev() {
            let g_t = &cache.gates[t * g4..(t + 1) * g4];
            let tc = &cache.tanh_cells[t * h..(t + 1) * h];
            for j in 0..h {
                let (i, f, g, o) = (g_t[j], g_t[h + j], g_t[2 * h + j], g_t[3 * h + j]);
                let c_prev = if t == 0 { 0.0 } else { cache.cells[(t - 1) * h + j] };
                let d_o = dh[j] * tc[j];
                dc[j] += dh[j] * o * (1.0 - tc[j] * tc[j]);
                dz[j] = dc[j] * g * i * (1.0 - i);
                dz[h + j] = dc[j] * c_prev * f * (1.0 - f);
                dz[2 * h + j] = dc[j] * i * (1.0 - g * g);
                dz[3 * h + j] = d_o * o * (1.0 - o);
                dc[j] *= f;
            }
            let x = &cache.inputs[t * n_in..(t + 1) * n_in];
            for (c, &xc) in x.iter().enumerate() {
                if xc != 0.0 {
                    math::axpy(xc, &dz, &mut self.w_ih.grad[c * g4..(c + 1) * g4]);
                }
            }
            math::axpy(1.0, &dz, &mut self.bias.grad);
            if let Some(gx) = grad_inputs.as_deref_mut() {
                for (c, v) in gx[t * n_in..(t + 1) * n_in].iter_mut().enumerate() {
                    *v += math::dot(&self.w_ih.value[c * g4..(c + 1) * g4], &dz);
                }
            }
            if t > 0 {
                let h_prev = &cache.hiddens[(t - 1) * h..t * h];
                for (c, &hc) in h_prev.iter().enumerate() {
                    math::axpy(hc, &dz, &mut self.w_hh.grad[c * g4..(c + 1) * g4]);
                }
                for (c, v) in dh.iter_mut().enumerate() {
                    *v = math::dot(&self.w_hh.value[c * g4..(c + 1) * g4], &dz);
                }
            }
        }
        Ok(())
    }
}

impl HasParams for LstmCell {
    fn visit_params(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.w_ih);
        f(&self.w_hh);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w_ih);
        f(&mut self.w_hh);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell(seed: u64) -> LstmCell {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = LstmCell::new("lstm", 3, 4, &mut rng);
        for b in &mut c.bias.value {
            *b += rng.random_range(-0.5..0.5);
        }
        c
    }

    fn inputs() -> Vec<f64> {
        vec![0.5, -0.3, 0.8, 0.1, 0.9, -0.7, -0.4, 0.2, 0.6]
    }

    const COEF: [f64; 4] = [0.9, -0.6, 1.3, 0.4];

    fn loss(c: &LstmCell, xs: &[f64]) -> f64 {
        let (h, _) = c.forward(xs).unwrap();
        h.iter().zip(COEF).map(|(a, w)| w * a + 0.5 * a * a).sum()
    }

    #[test]
    fn zero_parameters_give_zero_state() {
        let mut c = cell(1);
        c.visit_params_mut(&mut |p| p.value.iter_mut().for_each(|v| *v = 0.0));
        let (h, _) = c.forward(&inputs()).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_hand_cell() {
        let c = cell(2);
        let x = [0.2, -0.1, 0.4];
        let (h, _) = c.forward(&x).unwrap();
        for j in 0..4 {
            let z = |blk: usize| {
                let r = blk * 4 + j;
                c.bias.value[r] + (0..3).map(|k| c.w_ih.value[k * 16 + r] * x[k]).sum::<f64>()
            };
            let i = 1.0 / (1.0 + (-z(0)).exp());
            let g = z(2).tanh();
            let o = 1.0 / (1.0 + (-z(3)).exp());
            let expected = o * (i * g).tanh();
            assert!((h[j] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut c = cell(3);
        let xs = inputs();
        let (h, cache) = c.forward(&xs).unwrap();
        let dh: Vec<f64> = h.iter().zip(COEF).map(|(a, w)| w + a).collect();
        c.zero_grad();
        let mut dx = vec![0.0; xs.len()];
        c.backward(&cache, &dh, Some(&mut dx)).unwrap();
        let report = grad_check_params(&mut c, 1e-5, |c| loss(c, &xs)).unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");

        let snapshot = c.clone();
        let mut x_param = Param::zeros("x", &[xs.len()]);
        x_param.value = xs.clone();
        x_param.grad = dx;
        let report = grad_check_params(&mut x_param, 1e-5, |p| loss(&snapshot, &p.value)).unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn backward_is_linear_in_upstream_gradient() {
        let mut c = cell(4);
        let (_, cache) = c.forward(&inputs()).unwrap();
        c.zero_grad();
        c.backward(&cache, &[0.0; 4], None).unwrap();
        assert!(c.flat_grads().iter().all(|&g| g == 0.0));

        c.backward(&cache, &[0.3, -0.2, 0.1, 0.5], None).unwrap();
        let once = c.flat_grads();
        c.zero_grad();
        c.backward(&cache, &[0.6, -0.4, 0.2, 1.0], None).unwrap();
        for (a, b) in once.iter().zip(c.flat_grads()) {
            assert!((2.0 * a - b).abs() <= 1e-14 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn rejects_mismatched_shapes_and_caches() {
        let mut c = cell(5);
        assert!(c.forward(&[]).is_err());
        assert!(c.forward(&[1.0; 4]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let other = LstmCell::new("o", 2, 4, &mut rng);
        let (_, cache) = other.forward(&[0.1, 0.2]).unwrap();
        assert!(matches!(c.backward(&cache, &[0.0; 4], None), Err(Error::StaleCache(_))));
    }
}
