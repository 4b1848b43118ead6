//! Random projection and the scalable score estimator.
//!
//! Kernel distances are taken between `√(d/k)·R x` so that they approximate
//! distances in the original space; kernel gradients are pulled back through
//! `Rᵀ`, so fitted estimators score points in the original `d`-dimensional
//! coordinates.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::kernels::{gaussian, sq_dist};
use crate::sample::SampleMatrix;
use crate::ssge::{fit_with_map, FittedScoreEstimator, SsgeConfig};

/// Generator stream reserved for projection matrices, kept apart from the
/// sampling streams that share a seed.
const PROJECTOR_STREAM: u64 = 0x7270;

/// A `k × d` random projection with orthonormal rows, so that
/// `√(d/k)·‖R x‖ ≈ ‖x‖`. At `k = d` it is a rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProjector {
    matrix: Array2<f64>,
    seed: u64,
}

impl RandomProjector {
    /// Orthonormalized Gaussian draws from a dedicated stream of a
    /// generator seeded with `seed`; the result depends only on `(d, k, seed)`.
    pub fn new(d: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(Error::invalid("projection dimensions must be positive"));
        }
        if k > d {
            return Err(Error::invalid(format!(
                "target dimension {k} exceeds source dimension {d}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(PROJECTOR_STREAM);
        let mut matrix = Array2::<f64>::zeros((k, d));
        matrix
            .iter_mut()
            .for_each(|v| *v = StandardNormal.sample(&mut rng));
        // Gram-Schmidt over rows, two passes
        for i in 0..k {
            for _ in 0..2 {
                for j in 0..i {
                    let c = matrix.row(i).dot(&matrix.row(j));
                    let prev = matrix.row(j).to_owned();
                    matrix.row_mut(i).scaled_add(-c, &prev);
                }
            }
            let norm = matrix.row(i).dot(&matrix.row(i)).sqrt();
            matrix.row_mut(i).mapv_inplace(|v| v / norm);
        }
        Ok(RandomProjector { matrix, seed })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn target_dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Maps each row `x` to `R x`.
    pub fn project(&self, x: &SampleMatrix) -> Result<SampleMatrix> {
        check_dim(self.source_dim(), x.dim())?;
        Ok(SampleMatrix::new(x.view().dot(&self.matrix.t())))
    }

    /// Gaussian kernel on `√(d/k)`-rescaled projections.
    pub fn projected_kernel(&self, bandwidth: f64) -> Result<ProjectedRbfKernel> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(ProjectedRbfKernel {
            map: self.scaled_map(),
            bandwidth,
        })
    }

    /// `√(d/k)·R`
    pub(crate) fn scaled_map(&self) -> Array2<f64> {
        let scale = (self.source_dim() as f64 / self.target_dim() as f64).sqrt();
        &self.matrix * scale
    }
}

/// `k(x, y) = exp(-(d/k)·‖Rx - Ry‖² / (2σ²))`, defined on original points.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedRbfKernel {
    map: Array2<f64>,
    bandwidth: f64,
}

impl ProjectedRbfKernel {
    pub(crate) fn from_map(map: Array2<f64>, bandwidth: f64) -> Self {
        ProjectedRbfKernel { map, bandwidth }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn source_dim(&self) -> usize {
        self.map.ncols()
    }

    pub(crate) fn map(&self) -> &Array2<f64> {
        &self.map
    }

    fn features(&self, x: &[f64]) -> Vec<f64> {
        self.map
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.source_dim(), x.len())?;
        check_dim(self.source_dim(), y.len())?;
        Ok(gaussian(
            sq_dist(&self.features(x), &self.features(y)),
            self.bandwidth,
        ))
    }

    /// `-(d/k)/σ² · RᵀR (x - y) · k(x, y)`
    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let k = self.eval(x, y)?;
        let fx = self.features(x);
        let fy = self.features(y);
        let coef = -k / (self.bandwidth * self.bandwidth);
        let diff: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| coef * (a - b)).collect();
        let mut out = vec![0.0; self.source_dim()];
        for (row, c) in self.map.rows().into_iter().zip(&diff) {
            for (o, r) in out.iter_mut().zip(row.iter()) {
                *o += c * r;
            }
        }
        Ok(out)
    }
}

/// Fits the score estimator with every kernel evaluation and gradient taken
/// through the projected kernel.
pub fn fit_scalable(
    x: &SampleMatrix,
    config: &SsgeConfig,
    projector: &RandomProjector,
) -> Result<FittedScoreEstimator> {
    check_dim(projector.source_dim(), x.dim())?;
    fit_with_map(x, config, Some(projector.scaled_map())).map(|(est, _)| est)
}
