//! Gaussian RBF kernel, its analytic gradient, Gram assembly and the median
//! heuristic for bandwidth selection.
//!
//! The kernel is `k(x, y) = exp(-‖x - y‖² / (2σ²))` throughout; `grad_x`
//! uses the same `2σ²` convention.

use ndarray::{Array2, ArrayView2};

use crate::error::{check_dim, Error, Result};
use crate::sample::SampleMatrix;

/// Bandwidth used when every pairwise distance in a batch is zero.
pub const DEGENERATE_BANDWIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfKernel {
    bandwidth: f64,
}

impl RbfKernel {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(RbfKernel { bandwidth })
    }

    /// Kernel with the median-heuristic bandwidth of `x`.
    pub fn with_median_heuristic(x: &SampleMatrix) -> Result<Self> {
        RbfKernel::new(median_heuristic(x)?)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_pair(x, y)?;
        Ok(gaussian(sq_dist(x, y), self.bandwidth))
    }

    /// Gradient of `eval` with respect to its first argument:
    /// `-(x - y) / σ² · k(x, y)`.
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_pair(x, y)?;
        let k = gaussian(sq_dist(x, y), self.bandwidth);
        let scale = -k / (self.bandwidth * self.bandwidth);
        Ok(x.iter().zip(y).map(|(a, b)| scale * (a - b)).collect())
    }

    /// Gram matrix `K[i, j] = k(x_i, x_j)`.
    pub fn gram(&self, x: &SampleMatrix) -> Result<Array2<f64>> {
        x.require_samples(2)?;
        Ok(gram_matrix(x.view(), self.bandwidth))
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::invalid("kernel arguments must have dimension >= 1"));
    }
    check_dim(x.len(), y.len())
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
pub(crate) fn gaussian(sq_dist: f64, bandwidth: f64) -> f64 {
    (-sq_dist / (2.0 * bandwidth * bandwidth)).exp()
}

/// Symmetric Gram matrix over the rows of `points`.
///
/// Each entry is computed once from the explicit coordinate differences and
/// mirrored, so `K` is exactly symmetric with a unit diagonal.
pub(crate) fn gram_matrix(points: ArrayView2<'_, f64>, bandwidth: f64) -> Array2<f64> {
    let points = points.as_standard_layout();
    let (n, d) = points.dim();
    let flat = points.as_slice().expect("standard layout");
    let mut k = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = 1.0;
        let xi = &flat[i * d..(i + 1) * d];
        for j in 0..i {
            let v = gaussian(sq_dist(xi, &flat[j * d..(j + 1) * d]), bandwidth);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// Rectangular kernel matrix `K[i, j] = k(a_i, b_j)`.
pub(crate) fn cross_kernel(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    bandwidth: f64,
) -> Array2<f64> {
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (na, nb, d) = (a.nrows(), b.nrows(), a.ncols());
    let av = a.as_slice().expect("standard layout");
    let bv = b.as_slice().expect("standard layout");
    let mut out = Array2::<f64>::zeros((na, nb));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let ai = &av[i * d..(i + 1) * d];
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = gaussian(sq_dist(ai, &bv[j * d..(j + 1) * d]), bandwidth);
        }
    }
    out
}

/// Median of the `n(n-1)/2` pairwise Euclidean distances between rows of
/// `x`; falls back to [`DEGENERATE_BANDWIDTH`] when all points coincide.
pub fn median_heuristic(x: &SampleMatrix) -> Result<f64> {
    x.require_samples(2)?;
    Ok(median_pairwise_distance(x.view()))
}

pub(crate) fn median_pairwise_distance(points: ArrayView2<'_, f64>) -> f64 {
    let points = points.as_standard_layout();
    let (n, d) = points.dim();
    let flat = points.as_slice().expect("standard layout");
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = &flat[i * d..(i + 1) * d];
        for j in 0..i {
            dists.push(sq_dist(xi, &flat[j * d..(j + 1) * d]).sqrt());
        }
    }
    let m = dists.len();
    let upper = m / 2;
    let (_, &mut hi, _) = dists.select_nth_unstable_by(upper, f64::total_cmp);
    let median = if m % 2 == 1 {
        hi
    } else {
        // largest element of the lower half
        let lo = dists[..upper]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    if median > 0.0 {
        median
    } else {
        DEGENERATE_BANDWIDTH
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::sym_eig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(values: &[f64]) -> SampleMatrix {
        SampleMatrix::from_shape_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn eval_examples() {
        let k1 = RbfKernel::new(1.0).unwrap();
        assert_eq!(k1.eval(&[0.3, -1.2], &[0.3, -1.2]).unwrap(), 1.0);
        let v = k1.eval(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.36788).abs() < 1e-5);
        let k2 = RbfKernel::new(2.0).unwrap();
        let v = k2.eval(&[0.0], &[4.0]).unwrap();
        assert!((v - 0.13534).abs() < 1e-5);
    }

    #[test]
    fn eval_rejects_mismatch_and_bad_bandwidth() {
        let k = RbfKernel::new(1.0).unwrap();
        assert!(k.eval(&[1.0], &[1.0, 2.0]).unwrap_err().is_invalid_argument());
        assert!(k.grad_x(&[1.0], &[1.0, 2.0]).is_err());
        assert!(RbfKernel::new(0.0).is_err());
        assert!(RbfKernel::new(-1.0).is_err());
        assert!(RbfKernel::new(f64::NAN).is_err());
    }

    #[test]
    fn grad_examples() {
        let k = RbfKernel::new(1.0).unwrap();
        assert_eq!(k.grad_x(&[0.5, 2.0], &[0.5, 2.0]).unwrap(), vec![0.0, 0.0]);
        let g = k.grad_x(&[1.0], &[0.0]).unwrap();
        assert!((g[0] + (-0.5f64).exp()).abs() < 1e-15);
        assert!((g[0] + 0.60653).abs() < 1e-5);
    }

    #[test]
    fn gram_examples() {
        let k = RbfKernel::new(1.0).unwrap();
        let g = k.gram(&col(&[2.5, 2.5])).unwrap();
        assert!(g.iter().all(|&v| v == 1.0));
        let g = k.gram(&col(&[0.0, 1.0])).unwrap();
        let e = (-0.5f64).exp();
        assert_eq!(g, ndarray::array![[1.0, e], [e, 1.0]]);
        assert!(matches!(
            k.gram(&col(&[1.0])),
            Err(Error::InsufficientSamples { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn median_examples() {
        assert_eq!(median_heuristic(&col(&[0.0, 1.0, 3.0])).unwrap(), 2.0);
        assert_eq!(median_heuristic(&col(&[4.0, 4.0])).unwrap(), 1.0);
        assert_eq!(median_heuristic(&col(&[0.0, 2.0])).unwrap(), 2.0);
        // even count: {1, 2, 3, 1, 2, 1} -> sorted 1 1 1 2 2 3 -> 1.5
        assert_eq!(median_heuristic(&col(&[0.0, 1.0, 2.0, 3.0])).unwrap(), 1.5);
        assert!(median_heuristic(&col(&[0.0])).is_err());
    }

    #[test]
    fn gram_is_psd_over_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let d = rng.random_range(1..6);
            let bw = rng.random_range(0.3..3.0);
            let vals: Vec<f64> = (0..20 * d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x = SampleMatrix::from_shape_vec(20, d, vals).unwrap();
            let g = RbfKernel::new(bw).unwrap().gram(&x).unwrap();
            let eig = sym_eig(&g.view()).unwrap();
            let max = eig.eigenvalues[0];
            let min = *eig.eigenvalues.last().unwrap();
            assert!(min >= -1e-8 * max, "min {min} max {max}");
            assert_eq!(g, g.t());
            assert!(g.diag().iter().all(|&v| v == 1.0));
        }
    }

    fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, d)
    }

    proptest! {
        #[test]
        fn eval_is_exactly_symmetric(x in point(4), y in point(4), bw in 0.1f64..5.0) {
            let k = RbfKernel::new(bw).unwrap();
            prop_assert_eq!(k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
            let v = k.eval(&x, &y).unwrap();
            prop_assert!(v <= 1.0);
            // strictly positive unless the exponent underflows
            if sq_dist(&x, &y) / (2.0 * bw * bw) < 700.0 {
                prop_assert!(v > 0.0);
            }
        }

        #[test]
        fn grad_is_antisymmetric(x in point(3), y in point(3), bw in 0.1f64..5.0) {
            let k = RbfKernel::new(bw).unwrap();
            let a = k.grad_x(&x, &y).unwrap();
            let b = k.grad_x(&y, &x).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert_eq!(*p, -*q);
            }
        }

        #[test]
        fn grad_matches_central_differences(x in point(3), y in point(3), bw in 0.5f64..4.0) {
            let k = RbfKernel::new(bw).unwrap();
            let g = k.grad_x(&x, &y).unwrap();
            let h = 1e-4;
            let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (k.eval(&xp, &y).unwrap() - k.eval(&xm, &y).unwrap()) / (2.0 * h);
                let err = (fd - g[i]).abs() / scale.max(1e-3);
                prop_assert!(err <= 1e-5, "component {} fd {} analytic {}", i, fd, g[i]);
            }
        }

        #[test]
        fn median_is_permutation_invariant(vals in prop::collection::vec(-5.0f64..5.0, 6..30), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let n = vals.len() / 2;
            let x = SampleMatrix::from_shape_vec(n, 2, vals[..2 * n].to_vec()).unwrap();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let rows: Vec<Vec<f64>> = order.iter().map(|&i| x.row(i).to_vec()).collect();
            let y = SampleMatrix::from_rows(&rows).unwrap();
            prop_assert_eq!(median_heuristic(&x).unwrap(), median_heuristic(&y).unwrap());
        }
    }
}
