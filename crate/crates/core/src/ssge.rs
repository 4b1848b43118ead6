//! Spectral Stein gradient estimator.
//!
//! Given samples from an implicit density `q`, the score `∇ log q` is
//! expanded in Nyström approximations of the kernel eigenfunctions,
//!
//! ```text
//! ψ̂_j(x) = (√M / λ_j) Σ_m u_jm k(x, xᵐ)
//! ĝ(x)   = Σ_j β̂_j ψ̂_j(x),    β̂_j = -(1/M) Σ_m ∇ψ̂_j(xᵐ)
//! ```
//!
//! where `(λ_j, u_j)` are the leading eigenpairs of the Gram matrix.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::eigen::leading_eigenpairs;
use crate::error::{check_dim, Error, Result};
use crate::kernels::{cross_kernel, gram_matrix, median_pairwise_distance, RbfKernel};
use crate::projection::ProjectedRbfKernel;
use crate::sample::SampleMatrix;

pub const DEFAULT_MASS_THRESHOLD: f64 = 0.94;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsgeConfig {
    /// Kernel bandwidth; `None` selects the median heuristic.
    pub bandwidth: Option<f64>,
    /// Fraction of Gram spectral mass kept when choosing `J`.
    pub mass_threshold: f64,
    pub max_j: Option<usize>,
}

impl Default for SsgeConfig {
    fn default() -> Self {
        SsgeConfig {
            bandwidth: None,
            mass_threshold: DEFAULT_MASS_THRESHOLD,
            max_j: None,
        }
    }
}

impl SsgeConfig {
    pub fn with_bandwidth(mut self, bandwidth: f64) -> Self {
        self.bandwidth = Some(bandwidth);
        self
    }

    pub fn with_threshold(mut self, mass_threshold: f64) -> Self {
        self.mass_threshold = mass_threshold;
        self
    }

    pub fn with_max_j(mut self, max_j: usize) -> Self {
        self.max_j = Some(max_j);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass_threshold > 0.0 && self.mass_threshold <= 1.0) {
            return Err(Error::invalid(format!(
                "mass threshold must lie in (0, 1], got {}",
                self.mass_threshold
            )));
        }
        if let Some(bw) = self.bandwidth {
            RbfKernel::new(bw)?;
        }
        if self.max_j == Some(0) {
            return Err(Error::invalid("max_j must be at least 1"));
        }
        Ok(())
    }
}

/// Kernel used by a fitted estimator.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreKernel {
    Rbf(RbfKernel),
    Projected(ProjectedRbfKernel),
}

impl ScoreKernel {
    pub fn bandwidth(&self) -> f64 {
        match self {
            ScoreKernel::Rbf(k) => k.bandwidth(),
            ScoreKernel::Projected(k) => k.bandwidth(),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            ScoreKernel::Rbf(k) => k.eval(x, y),
            ScoreKernel::Projected(k) => k.eval(x, y),
        }
    }

    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        match self {
            ScoreKernel::Rbf(k) => k.grad_x(x, y),
            ScoreKernel::Projected(k) => k.grad_x(x, y),
        }
    }

    fn features(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        match self {
            ScoreKernel::Rbf(_) => x.to_owned(),
            ScoreKernel::Projected(k) => x.dot(&k.map().t()),
        }
    }

    /// Maps feature-space gradients (rows) back to input coordinates.
    fn pull_back(&self, g: Array2<f64>) -> Array2<f64> {
        match self {
            ScoreKernel::Rbf(_) => g,
            ScoreKernel::Projected(k) => g.dot(k.map()),
        }
    }
}

/// Frozen estimator state.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedScoreEstimator {
    base_samples: SampleMatrix,
    base_features: Array2<f64>,
    kernel: ScoreKernel,
    eigenvalues: Array1<f64>,
    eigenvectors: Array2<f64>,
    beta: Array2<f64>,
    eigen_mass: f64,
    /// `U diag(√M/λ) β`, so that `ĝ(Q) = K(Q, X) · weights`.
    weights: Array2<f64>,
}

impl FittedScoreEstimator {
    pub fn base_samples(&self) -> &SampleMatrix {
        &self.base_samples
    }

    pub fn kernel(&self) -> &ScoreKernel {
        &self.kernel
    }

    pub fn bandwidth(&self) -> f64 {
        self.kernel.bandwidth()
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    /// `M × J`, column `j` is `u_j`.
    pub fn eigenvectors(&self) -> &Array2<f64> {
        &self.eigenvectors
    }

    /// `J × d`, row `j` is `β̂_j`.
    pub fn beta(&self) -> &Array2<f64> {
        &self.beta
    }

    pub fn num_terms(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigen_mass(&self) -> f64 {
        self.eigen_mass
    }

    pub fn dim(&self) -> usize {
        self.base_samples.dim()
    }

    fn query_kernel(&self, q: &SampleMatrix) -> Result<Array2<f64>> {
        check_dim(self.dim(), q.dim())?;
        q.require_finite()?;
        let feats = self.kernel.features(q.view());
        Ok(cross_kernel(
            feats.view(),
            self.base_features.view(),
            self.bandwidth(),
        ))
    }

    /// Estimated score `ĝ` at each query row; `q × d`.
    pub fn score(&self, q: &SampleMatrix) -> Result<Array2<f64>> {
        Ok(self.query_kernel(q)?.dot(&self.weights))
    }

    /// Eigenfunction values `ψ̂_j` at each query row; `q × J`.
    pub fn eigenfunctions(&self, q: &SampleMatrix) -> Result<Array2<f64>> {
        let m = self.base_samples.n_samples() as f64;
        let scale = self.eigenvalues.mapv(|l| m.sqrt() / l);
        Ok(self.query_kernel(q)?.dot(&self.eigenvectors) * &scale)
    }
}

/// Fits the estimator on `x` with the plain RBF kernel.
pub fn fit(x: &SampleMatrix, config: &SsgeConfig) -> Result<FittedScoreEstimator> {
    fit_with_map(x, config, None).map(|(est, _)| est)
}

/// Fit plus the estimated scores at the base samples themselves, computed
/// from the Gram matrix already in hand.
///
/// `map`, when given, is the linear feature map of a projected kernel.
pub(crate) fn fit_with_map(
    x: &SampleMatrix,
    config: &SsgeConfig,
    map: Option<Array2<f64>>,
) -> Result<(FittedScoreEstimator, Array2<f64>)> {
    config.validate()?;
    x.require_samples(2)?;
    x.require_finite()?;
    let features = match &map {
        Some(f) => {
            check_dim(f.ncols(), x.dim())?;
            x.view().dot(&f.t())
        }
        None => x.as_array().clone(),
    };
    let bandwidth = match config.bandwidth {
        Some(bw) => bw,
        None => median_pairwise_distance(features.view()),
    };
    let kernel = match map {
        Some(f) => ScoreKernel::Projected(ProjectedRbfKernel::from_map(f, bandwidth)),
        None => ScoreKernel::Rbf(RbfKernel::new(bandwidth)?),
    };

    let m = x.n_samples();
    let k = gram_matrix(features.view(), bandwidth);
    let eig = leading_eigenpairs(&k.view(), config.mass_threshold, config.max_j)?;
    let lambda = eig.eigenvalues;
    let u = eig.eigenvectors;

    // Σ_{m'} ∇ₓk(x^{m'}, x^m) for every base point m.
    let grad_sum = kernel.pull_back(kernel_grad_sums(&k, &features, bandwidth));
    let sqrt_m = (m as f64).sqrt();
    let inv = lambda.mapv(|l| 1.0 / l);
    let beta = u.t().dot(&grad_sum) * &inv.mapv(|v| -v / sqrt_m).insert_axis(Axis(1));
    let weights = (&u * &inv.mapv(|v| v * sqrt_m)).dot(&beta);
    let base_scores = k.dot(&weights);

    let est = FittedScoreEstimator {
        base_samples: x.clone(),
        base_features: features,
        kernel,
        eigenvalues: lambda,
        eigenvectors: u,
        beta,
        eigen_mass: eig.eigen_mass,
        weights,
    };
    Ok((est, base_scores))
}

/// Row `m` holds `Σ_{m'} ∇ₓk(x^{m'}, x^m) = -(1/σ²) Σ_{m'} (f_{m'} - f_m) K[m', m]`
/// in feature coordinates.
fn kernel_grad_sums(k: &Array2<f64>, features: &Array2<f64>, bandwidth: f64) -> Array2<f64> {
    let row_sums = k.sum_axis(Axis(1));
    let kf = k.dot(features);
    let diag_f = features * &row_sums.insert_axis(Axis(1));
    (kf - diag_f) * (-1.0 / (bandwidth * bandwidth))
}

/// Max-norm of the Monte Carlo estimate of
/// `E[h(x) s(x)ᵀ + ∇h(x)]` with `h(x) = (k(x, x¹), …, k(x, xᴹ))`.
///
/// Zero in expectation when `s` is the true score of the distribution that
/// generated `x`.
pub fn stein_residual(
    kernel: &RbfKernel,
    x: &SampleMatrix,
    score_values: &Array2<f64>,
) -> Result<f64> {
    x.require_samples(2)?;
    let m = x.n_samples();
    if score_values.dim() != (m, x.dim()) {
        return Err(Error::invalid(format!(
            "score values must be {}x{}, got {}x{}",
            m,
            x.dim(),
            score_values.nrows(),
            score_values.ncols()
        )));
    }
    let k = gram_matrix(x.view(), kernel.bandwidth());
    let r = (k.dot(score_values) + kernel_grad_sums(&k, x.as_array(), kernel.bandwidth()))
        / m as f64;
    Ok(r.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
}
