//! Parametric encoders and their parameter-Jacobian-transpose products.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};

/// A differentiable map `z = E_ψ(x, ε)` with parameters `ψ`.
///
/// Deterministic encoders have `noise_dim() == 0` and ignore `noise`.
pub trait Encoder {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn noise_dim(&self) -> usize {
        0
    }
    fn param_count(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
    fn forward(&self, x: &[f64], noise: &[f64]) -> Vec<f64>;
    /// `(∂E/∂ψ)ᵀ v` at fixed `(x, ε)`.
    fn pjvp(&self, x: &[f64], noise: &[f64], v: &[f64]) -> Vec<f64>;
    /// `(∂E/∂x)ᵀ v` at fixed `(x, ε)`.
    fn input_vjp(&self, x: &[f64], noise: &[f64], v: &[f64]) -> Vec<f64>;
    /// `∇_z log q(z | x)` when the conditional density is known in closed form.
    fn conditional_score(&self, _x: &[f64], _z: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

fn check_params(expected: usize, params: &[f64]) -> Result<()> {
    check_dim(expected, params.len())?;
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("parameters must be finite"));
    }
    Ok(())
}

/// `z = x`, no parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityEncoder {
    dim: usize,
}

impl IdentityEncoder {
    pub fn new(dim: usize) -> Self {
        IdentityEncoder { dim }
    }
}

impl Encoder for IdentityEncoder {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn param_count(&self) -> usize {
        0
    }
    fn params(&self) -> Vec<f64> {
        Vec::new()
    }
    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_params(0, params)
    }
    fn forward(&self, x: &[f64], _noise: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
    fn pjvp(&self, _x: &[f64], _noise: &[f64], _v: &[f64]) -> Vec<f64> {
        Vec::new()
    }
    fn input_vjp(&self, _x: &[f64], _noise: &[f64], v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
}

/// `z = W x + σ η` with `η ~ N(0, I)`; deterministic when `σ = 0`.
///
/// Parameters are the entries of `W` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    w: Array2<f64>,
    noise_std: f64,
}

impl LinearEncoder {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        Self::with_noise(w, 0.0)
    }

    pub fn with_noise(w: Array2<f64>, noise_std: f64) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::invalid("weight matrix must be non-empty"));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::invalid(format!(
                "noise standard deviation must be non-negative, got {noise_std}"
            )));
        }
        Ok(LinearEncoder {
            w: w.as_standard_layout().into_owned(),
            noise_std,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

impl Encoder for LinearEncoder {
    fn input_dim(&self) -> usize {
        self.w.ncols()
    }
    fn output_dim(&self) -> usize {
        self.w.nrows()
    }
    fn noise_dim(&self) -> usize {
        if self.noise_std > 0.0 {
            self.output_dim()
        } else {
            0
        }
    }
    fn param_count(&self) -> usize {
        self.w.len()
    }
    fn params(&self) -> Vec<f64> {
        self.w.iter().copied().collect()
    }
    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_params(self.param_count(), params)?;
        self.w.iter_mut().zip(params).for_each(|(w, p)| *w = *p);
        Ok(())
    }
    fn forward(&self, x: &[f64], noise: &[f64]) -> Vec<f64> {
        let mut z = matvec(&self.w, x);
        if self.noise_std > 0.0 {
            z.iter_mut()
                .zip(noise)
                .for_each(|(zi, e)| *zi += self.noise_std * e);
        }
        z
    }
    fn pjvp(&self, x: &[f64], _noise: &[f64], v: &[f64]) -> Vec<f64> {
        v.iter()
            .flat_map(|&va| x.iter().map(move |&xb| va * xb))
            .collect()
    }
    fn input_vjp(&self, _x: &[f64], _noise: &[f64], v: &[f64]) -> Vec<f64> {
        matvec_t(&self.w, v)
    }
    fn conditional_score(&self, x: &[f64], z: &[f64]) -> Option<Vec<f64>> {
        if self.noise_std == 0.0 {
            return None;
        }
        let var = self.noise_std * self.noise_std;
        let mean = matvec(&self.w, x);
        Some(z.iter().zip(&mean).map(|(zi, m)| -(zi - m) / var).collect())
    }
}

/// `z = W₂ tanh(W₁ x + b₁) + b₂`, optionally plus `x`.
///
/// Parameter order: `W₁` (row-major), `b₁`, `W₂` (row-major), `b₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhMlpEncoder {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    skip: bool,
}

impl TanhMlpEncoder {
    pub fn new(
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
        skip: bool,
    ) -> Result<Self> {
        check_dim(w1.nrows(), b1.len())?;
        check_dim(w1.nrows(), w2.ncols())?;
        check_dim(w2.nrows(), b2.len())?;
        if skip {
            check_dim(w1.ncols(), w2.nrows())?;
        }
        if w1.is_empty() || w2.is_empty() {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        Ok(TanhMlpEncoder {
            w1: w1.as_standard_layout().into_owned(),
            b1,
            w2: w2.as_standard_layout().into_owned(),
            b2,
            skip,
        })
    }

    /// Gaussian weights with standard deviation `scale`, zero biases.
    pub fn random(
        input_dim: usize,
        hidden: usize,
        output_dim: usize,
        scale: f64,
        skip: bool,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |r, c| {
            Array2::from_shape_simple_fn((r, c), || {
                let v: f64 = StandardNormal.sample(&mut rng);
                scale * v
            })
        };
        let w1 = draw(hidden, input_dim);
        let w2 = draw(output_dim, hidden);
        Self::new(w1, Array1::zeros(hidden), w2, Array1::zeros(output_dim), skip)
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        matvec(&self.w1, x)
            .iter()
            .zip(&self.b1)
            .map(|(a, b)| (a + b).tanh())
            .collect()
    }

    /// Backpropagated cotangent at the hidden pre-activation.
    fn hidden_cotangent(&self, t: &[f64], v: &[f64]) -> Vec<f64> {
        matvec_t(&self.w2, v)
            .iter()
            .zip(t)
            .map(|(g, ti)| g * (1.0 - ti * ti))
            .collect()
    }
}

impl Encoder for TanhMlpEncoder {
    fn input_dim(&self) -> usize {
        self.w1.ncols()
    }
    fn output_dim(&self) -> usize {
        self.w2.nrows()
    }
    fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }
    fn params(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
            .collect()
    }
    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_params(self.param_count(), params)?;
        let mut it = params.iter();
        for slot in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
        {
            *slot = *it.next().expect("length checked");
        }
        Ok(())
    }
    fn forward(&self, x: &[f64], _noise: &[f64]) -> Vec<f64> {
        let t = self.hidden(x);
        let mut z = matvec(&self.w2, &t);
        for (i, zi) in z.iter_mut().enumerate() {
            *zi += self.b2[i];
            if self.skip {
                *zi += x[i];
            }
        }
        z
    }
    fn pjvp(&self, x: &[f64], _noise: &[f64], v: &[f64]) -> Vec<f64> {
        let t = self.hidden(x);
        let u = self.hidden_cotangent(&t, v);
        let mut out = Vec::with_capacity(self.param_count());
        for &uj in &u {
            out.extend(x.iter().map(|&xb| uj * xb));
        }
        out.extend_from_slice(&u);
        for &va in v {
            out.extend(t.iter().map(|&tj| va * tj));
        }
        out.extend_from_slice(v);
        out
    }
    fn input_vjp(&self, x: &[f64], _noise: &[f64], v: &[f64]) -> Vec<f64> {
        let t = self.hidden(x);
        let u = self.hidden_cotangent(&t, v);
        let mut g = matvec_t(&self.w1, &u);
        if self.skip {
            g.iter_mut().zip(v).for_each(|(gi, vi)| *gi += vi);
        }
        g
    }
}

/// `z = ρ x + √(1-ρ²) ε` elementwise, the single parameter being `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianChannelEncoder {
    rho: f64,
    dim: usize,
}

impl GaussianChannelEncoder {
    pub fn new(rho: f64, dim: usize) -> Result<Self> {
        check_rho(rho)?;
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        Ok(GaussianChannelEncoder { rho, dim })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    fn noise_scale(&self) -> f64 {
        (1.0 - self.rho * self.rho).sqrt()
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("rho must lie in (-1, 1), got {rho}")))
    }
}

impl Encoder for GaussianChannelEncoder {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        self.dim
    }
    fn param_count(&self) -> usize {
        1
    }
    fn params(&self) -> Vec<f64> {
        vec![self.rho]
    }
    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_params(1, params)?;
        check_rho(params[0])?;
        self.rho = params[0];
        Ok(())
    }
    fn forward(&self, x: &[f64], noise: &[f64]) -> Vec<f64> {
        let s = self.noise_scale();
        x.iter()
            .zip(noise)
            .map(|(xi, e)| self.rho * xi + s * e)
            .collect()
    }
    fn pjvp(&self, x: &[f64], noise: &[f64], v: &[f64]) -> Vec<f64> {
        // dz/dρ = x - ρ ε / √(1-ρ²)
        let c = self.rho / self.noise_scale();
        let g = v
            .iter()
            .zip(x.iter().zip(noise))
            .map(|(vi, (xi, e))| vi * (xi - c * e))
            .sum();
        vec![g]
    }
    fn input_vjp(&self, _x: &[f64], _noise: &[f64], v: &[f64]) -> Vec<f64> {
        v.iter().map(|vi| self.rho * vi).collect()
    }
    fn conditional_score(&self, x: &[f64], z: &[f64]) -> Option<Vec<f64>> {
        let var = 1.0 - self.rho * self.rho;
        Some(
            z.iter()
                .zip(x)
                .map(|(zi, xi)| -(zi - self.rho * xi) / var)
                .collect(),
        )
    }
}

fn matvec(w: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    w.rows()
        .into_iter()
        .map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn matvec_t(w: &Array2<f64>, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.ncols()];
    for (row, &vi) in w.rows().into_iter().zip(v) {
        for (o, a) in out.iter_mut().zip(row.iter()) {
            *o += vi * a;
        }
    }
    out
}

/// Largest discrepancy between `pjvp` and central differences of
/// `vᵀ forward` over each parameter (step `1e-4`, random `v` drawn from
/// `seed`), relative to the largest finite-difference entry.
///
/// Parameters are restored before returning.
pub fn pjvp_check(enc: &mut dyn Encoder, x: &[f64], noise: &[f64], seed: u64) -> Result<f64> {
    let p = enc.param_count();
    if p == 0 {
        return Err(Error::invalid("encoder has no parameters"));
    }
    check_dim(enc.input_dim(), x.len())?;
    check_dim(enc.noise_dim(), noise.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..enc.output_dim())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let analytic = enc.pjvp(x, noise, &v);
    let base = enc.params();
    let h = 1e-4;
    let mut fd = Vec::with_capacity(p);
    let eval_at = |enc: &mut dyn Encoder, i: usize, delta: f64| -> Result<f64> {
        let mut shifted = base.clone();
        shifted[i] += delta;
        enc.set_params(&shifted)?;
        Ok(enc
            .forward(x, noise)
            .iter()
            .zip(&v)
            .map(|(z, vi)| z * vi)
            .sum())
    };
    let mut outcome = Ok(());
    for i in 0..p {
        match (eval_at(enc, i, h), eval_at(enc, i, -h)) {
            (Ok(up), Ok(down)) => fd.push((up - down) / (2.0 * h)),
            (Err(e), _) | (_, Err(e)) => {
                outcome = Err(e);
                break;
            }
        }
    }
    enc.set_params(&base)?;
    outcome?;
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    Ok(analytic
        .iter()
        .zip(&fd)
        .map(|(a, f)| (a - f).abs() / scale)
        .fold(0.0, f64::max))
}
