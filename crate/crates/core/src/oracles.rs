//! Closed-form Gaussian references used to validate the estimators.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoder::LinearEncoder;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{logdet_spd, solve_spd};
use crate::sample::SampleMatrix;

/// Pairs `(x, y)` of `d`-vectors with `corr(xᵢ, yⱼ) = δᵢⱼ ρ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyProblem {
    d: usize,
    rho: f64,
}

impl ToyProblem {
    pub fn new(d: usize, rho: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if !(rho.is_finite() && rho.abs() < 1.0) {
            return Err(Error::invalid(format!("rho must lie in (-1, 1), got {rho}")));
        }
        Ok(ToyProblem { d, rho })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `∂I/∂ρ = ρ d / (1 - ρ²)`
    pub fn analytic_mi_grad(&self) -> f64 {
        self.rho * self.d as f64 / (1.0 - self.rho * self.rho)
    }

    /// `I = -(d/2) ln(1 - ρ²)`
    pub fn analytic_mi(&self) -> f64 {
        -0.5 * self.d as f64 * (1.0 - self.rho * self.rho).ln()
    }
}

/// `x ~ N(0, I)`, `y = ρ x + √(1-ρ²) ε`.
pub fn sample_toy(p: &ToyProblem, n: usize, seed: u64) -> Result<(SampleMatrix, SampleMatrix)> {
    if n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<f64> { (0..n * p.d).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let x = draw();
    let eps = draw();
    let s = (1.0 - p.rho * p.rho).sqrt();
    let y = x.iter().zip(&eps).map(|(xi, e)| p.rho * xi + s * e).collect();
    Ok((
        SampleMatrix::from_shape_vec(n, p.d, x)?,
        SampleMatrix::from_shape_vec(n, p.d, y)?,
    ))
}

/// Score of `N(mean, diag(cov_diag))`: `-(x - mean) / cov_diag`.
pub fn gaussian_score(x: &[f64], mean: &[f64], cov_diag: &[f64]) -> Result<Vec<f64>> {
    check_dim(x.len(), mean.len())?;
    check_dim(x.len(), cov_diag.len())?;
    if cov_diag.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("variances must be positive"));
    }
    Ok(x.iter()
        .zip(mean)
        .zip(cov_diag)
        .map(|((xi, m), v)| -(xi - m) / v)
        .collect())
}

fn check_variance(var: f64) -> Result<()> {
    if var > 0.0 && var.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("noise variance must be positive, got {var}")))
    }
}

/// `I(x; z)` for `z = W x + η`, `x ~ N(0, I)`, `η ~ N(0, σ² I)`:
/// `½ log det(I + W Wᵀ / σ²)`.
pub fn linear_gaussian_mi(w: &Array2<f64>, noise_var: f64) -> Result<f64> {
    check_variance(noise_var)?;
    let m = Array2::<f64>::eye(w.nrows()) + w.dot(&w.t()) / noise_var;
    Ok(0.5 * logdet_spd(&m)?)
}

/// `∂I/∂W = (σ² I + W Wᵀ)⁻¹ W`.
pub fn linear_gaussian_mi_grad(w: &Array2<f64>, noise_var: f64) -> Result<Array2<f64>> {
    check_variance(noise_var)?;
    let s = Array2::<f64>::eye(w.nrows()) * noise_var + w.dot(&w.t());
    solve_spd(&s, w)
}

/// Two-stage chain `h = A x + σ₁ η₁`, `z = B h + σ₂ η₂` with `x ~ N(0, I)`.
///
/// Parameters are `A` then `B`, each row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianChain {
    a: Array2<f64>,
    var1: f64,
    b: Array2<f64>,
    var2: f64,
}

impl LinearGaussianChain {
    pub fn new(a: Array2<f64>, var1: f64, b: Array2<f64>, var2: f64) -> Result<Self> {
        check_variance(var1)?;
        check_variance(var2)?;
        check_dim(a.nrows(), b.ncols())?;
        Ok(LinearGaussianChain { a, var1, b, var2 })
    }

    pub fn params(&self) -> Vec<f64> {
        self.a.iter().chain(self.b.iter()).copied().collect()
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        check_dim(self.a.len() + self.b.len(), params.len())?;
        let (pa, pb) = params.split_at(self.a.len());
        let a = Array2::from_shape_vec(self.a.dim(), pa.to_vec()).expect("shape");
        let b = Array2::from_shape_vec(self.b.dim(), pb.to_vec()).expect("shape");
        Self::new(a, self.var1, b, self.var2)
    }

    fn cov_h(&self) -> Array2<f64> {
        self.a.dot(&self.a.t()) + Array2::<f64>::eye(self.a.nrows()) * self.var1
    }

    fn cov_z(&self, cov_h: &Array2<f64>) -> Array2<f64> {
        self.b.dot(cov_h).dot(&self.b.t()) + Array2::<f64>::eye(self.b.nrows()) * self.var2
    }

    /// `I(h; z) = ½ log det(Σ_z) - (d_z/2) log σ₂²`.
    pub fn mi(&self) -> Result<f64> {
        let sz = self.cov_z(&self.cov_h());
        Ok(0.5 * logdet_spd(&sz)? - 0.5 * self.b.nrows() as f64 * self.var2.ln())
    }

    /// `∂I/∂A = Bᵀ Σ_z⁻¹ B A`, `∂I/∂B = Σ_z⁻¹ B Σ_h`, flattened like
    /// [`params`](Self::params).
    pub fn mi_grad(&self) -> Result<Vec<f64>> {
        let sh = self.cov_h();
        let sz = self.cov_z(&sh);
        let sinv_b = solve_spd(&sz, &self.b)?;
        let ga = self.b.t().dot(&sinv_b).dot(&self.a);
        let gb = sinv_b.dot(&sh);
        Ok(ga.iter().chain(gb.iter()).copied().collect())
    }

    /// The two stages as noisy linear encoders.
    pub fn encoders(&self) -> Result<(LinearEncoder, LinearEncoder)> {
        Ok((
            LinearEncoder::with_noise(self.a.clone(), self.var1.sqrt())?,
            LinearEncoder::with_noise(self.b.clone(), self.var2.sqrt())?,
        ))
    }
}

/// Central differences `(f(θ + h eᵢ) - f(θ - h eᵢ)) / 2h`.
pub fn finite_diff(f: impl Fn(&[f64]) -> f64, theta: &[f64], step: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            t[i] = theta[i] + step;
            let up = f(&t);
            t[i] = theta[i] - step;
            let down = f(&t);
            t[i] = theta[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}
