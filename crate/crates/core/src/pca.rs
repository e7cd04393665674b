//! Principal component analysis through a cyclic Jacobi eigensolver.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a symmetric `n x n` row-major matrix. Returns
/// eigenvalues in descending order with unit eigenvectors as rows.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if matrix.len() != n * n {
        return Err(Error::shape("symmetric matrix", n * n, matrix.len()));
    }
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + math::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y * n + y].total_cmp(&a[x * n + x]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k * n + i]).collect()).collect();
    Ok((values, vectors))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Descending covariance eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Unit principal directions, one per row, in eigenvalue order.
    pub components: Vec<Vec<f64>>,
}

impl Pca {
    /// Fits on `points` (all of equal dimension) after zero-mean centring.
    pub fn fit(points: &[Vec<f64>]) -> Result<Pca> {
        let Some(first) = points.first() else {
            return Err(Error::EmptyInput("pca points"));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::EmptyInput("pca dimension"));
        }
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::shape("pca point", dim, p.len()));
        }
        let n = points.len() as f64;
        let mut mean = vec![0.0; dim];
        for p in points {
            math::axpy(1.0 / n, p, &mut mean);
        }
        let mut cov = vec![0.0; dim * dim];
        let mut centred = vec![0.0; dim];
        for p in points {
            for (c, (x, m)) in centred.iter_mut().zip(p.iter().zip(&mean)) {
                *c = x - m;
            }
            math::outer_acc(&mut cov, dim, &centred, &centred);
        }
        let denom = (points.len().max(2) - 1) as f64;
        cov.iter_mut().for_each(|c| *c /= denom);
        let (eigenvalues, components) = symmetric_eigen(&cov, dim)?;
        Ok(Pca { mean, eigenvalues, components })
    }

    /// Coordinates of `point` along the first `dims` components.
    pub fn project(&self, point: &[f64], dims: usize) -> Vec<f64> {
        let centred: Vec<f64> = point.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        self.components.iter().take(dims).map(|c| math::dot(c, &centred)).collect()
    }

    /// Maps projected coordinates back to the input space.
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(coords) {
            math::axpy(w, c, &mut out);
        }
        out
    }
}

/// Projects `points` onto their top `dims` principal components.
pub fn project(points: &[Vec<f64>], dims: usize) -> Result<Vec<Vec<f64>>> {
    if points.len() < dims {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} points cannot span {dims} principal components",
            points.len()
        )));
    }
    let pca = Pca::fit(points)?;
    if dims > pca.mean.len() {
        return Err(Error::InvalidArgument(alloc::format!("{dims} components requested from {} dims", pca.mean.len())));
    }
    Ok(points.iter().map(|p| pca.project(p, dims)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = rng.random_range(-1.0..1.0);
                (0..dim).map(|d| z * (d as f64 + 1.0) + rng.random_range(-0.3..0.3) + 2.0).collect()
            })
            .collect()
    }

    #[test]
    fn diagonal_matrix_eigenvalues() {
        let (vals, vecs) = symmetric_eigen(&[1.0, 0.0, 0.0, 3.0], 2).unwrap();
        assert_eq!(vals, vec![3.0, 1.0]);
        assert_eq!(vecs[0], vec![0.0, 1.0]);
    }

    #[test]
    fn two_by_two_hand_case() {
        let (vals, _) = symmetric_eigen(&[2.0, 1.0, 1.0, 2.0], 2).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projections_are_centred_and_ordered() {
        let pts = cloud(200, 6, 1);
        let proj = project(&pts, 3).unwrap();
        let mut vars = vec![];
        for d in 0..3 {
            let mean: f64 = proj.iter().map(|p| p[d]).sum::<f64>() / proj.len() as f64;
            assert!(mean.abs() < 1e-9);
            vars.push(proj.iter().map(|p| p[d] * p[d]).sum::<f64>());
        }
        assert!(vars[0] >= vars[1] && vars[1] >= vars[2]);
    }

    #[test]
    fn full_rank_reconstruction() {
        let pts = cloud(50, 8, 2);
        let pca = Pca::fit(&pts).unwrap();
        for p in &pts {
            let back = pca.reconstruct(&pca.project(p, 8));
            for (a, b) in p.iter().zip(&back) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn too_few_points() {
        assert!(project(&cloud(2, 4, 3), 3).is_err());
    }
}
