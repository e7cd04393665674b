//! Small dense linear-algebra and scalar helpers.
//!
//! Matrices are row-major `&[f64]` slices with explicit dimensions. The
//! reductions use four independent accumulators so the compiler can keep the
//! inner loops in vector registers; the summation order is fixed, which keeps
//! results bit-reproducible.

use alloc::vec::Vec;

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Branch-free `e^x` that the compiler can vectorise over slices.
///
/// Cody-Waite reduction by `ln 2` followed by a degree-12 Taylor polynomial on
/// `|r| <= ln(2)/2`; agrees with libm to a few ulp. Inputs are clamped to the
/// finite range, so very negative arguments give subnormals rather than zero.
#[inline(always)]
pub fn exp_vec(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const ROUND: f64 = 6_755_399_441_055_744.0;
    let x = x.clamp(-708.0, 709.0);
    let n = (x * core::f64::consts::LOG2_E + ROUND) - ROUND;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    for c in [
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    p * f64::from_bits(((n as i64 + 1023) as u64) << 52)
}

/// Logistic function for slice kernels, built on [`exp_vec`].
#[inline(always)]
pub fn sigmoid_vec(x: f64) -> f64 {
    1.0 / (1.0 + exp_vec(-x))
}

/// Hyperbolic tangent for slice kernels, built on [`exp_vec`]. The absolute
/// error is a few ulp of 1; near zero the relative error is larger than libm's.
#[inline(always)]
pub fn tanh_vec(x: f64) -> f64 {
    let e = exp_vec(-2.0 * x.abs());
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x` for a `rows x cols` row-major `w`, overwriting `out`.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out += Wᵀ g` for a `rows x cols` row-major `w`.
pub fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, g: &[f64], out: &mut [f64]) {
    debug_assert_eq!(g.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for (r, &gr) in g.iter().enumerate() {
        if gr != 0.0 {
            axpy(gr, &w[r * cols..(r + 1) * cols], out);
        }
    }
}

/// `out += Mᵀ x` where `wt` holds `Mᵀ` as `x.len() x out.len()` row-major.
/// Outputs are produced in blocks of eight whose partial sums stay in
/// registers; each output still accumulates its terms in index order.
pub fn gemv_t_acc(wt: &[f64], x: &[f64], out: &mut [f64]) {
    let n = out.len();
    debug_assert_eq!(wt.len(), x.len() * n);
    let mut r = 0;
    while r + 8 <= n {
        let mut acc = [0.0f64; 8];
        acc.copy_from_slice(&out[r..r + 8]);
        for (c, &xc) in x.iter().enumerate() {
            let w = &wt[c * n + r..c * n + r + 8];
            for j in 0..8 {
                acc[j] += xc * w[j];
            }
        }
        out[r..r + 8].copy_from_slice(&acc);
        r += 8;
    }
    for (rr, o) in out.iter_mut().enumerate().skip(r) {
        for (c, &xc) in x.iter().enumerate() {
            *o += xc * wt[c * n + rr];
        }
    }
}

/// `W += g xᵀ` (rank-one update) for a `rows x cols` row-major `w`.
pub fn outer_acc(w: &mut [f64], cols: usize, g: &[f64], x: &[f64]) {
    debug_assert_eq!(x.len(), cols);
    for (r, &gr) in g.iter().enumerate() {
        if gr != 0.0 {
            axpy(gr, x, &mut w[r * cols..(r + 1) * cols]);
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| exp(z - max)).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    sqrt(ss / (xs.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_activations_track_libm() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.01 + 1e-3;
            let e = libm::exp(x);
            assert!((exp_vec(x) - e).abs() <= 4.0 * f64::EPSILON * e, "exp({x})");
            assert!((sigmoid_vec(x) - sigmoid(x)).abs() < 1e-15, "sigmoid({x})");
            assert!((tanh_vec(x) - tanh(x)).abs() < 1e-15, "tanh({x})");
        }
        assert_eq!(exp_vec(0.0), 1.0);
        assert_eq!(tanh_vec(0.0), 0.0);
        assert!(exp_vec(1e6).is_finite() && exp_vec(-1e6) >= 0.0);
        assert_eq!(sigmoid_vec(-1e6), sigmoid_vec(-1e6));
        assert_eq!(tanh_vec(-50.0), -1.0);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        let q = softmax(&[101.0, 102.0, 103.0]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for &x in &[-30.0, -1.0, 0.0, 0.5, 40.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }
}
