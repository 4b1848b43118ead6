//! Mutual-information gradient estimation.
//!
//! Every entropy term is estimated by reparameterization,
//!
//! ```text
//! ∇ψ H(z) = -E[ (∂z/∂ψ)ᵀ ∇_z log q(z) ]
//! ```
//!
//! with the score supplied by the spectral Stein estimator (or, for
//! conditional terms, by the encoder's closed form when it has one). The
//! gradients combine as
//!
//! ```text
//! deterministic z = E(x):        ∇I(x; z) = ∇H(z) - ∇H(x, z)
//! chain h = C(x), z = f(h):      ∇I(h; z) = ∇H(h) + ∇H(z) - ∇H(h, z)
//! stochastic z = E(x, ε):        ∇I(x; z) = ∇H(z) - ∇H(z | x)
//! ```

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::encoder::Encoder;
use crate::error::{check_dim, Error, Result};
use crate::kernels::median_pairwise_distance;
use crate::linalg::solve_spd;
use crate::projection::RandomProjector;
use crate::sample::SampleMatrix;
use crate::ssge::{fit_with_map, SsgeConfig};

const STREAM_MARGINAL: u64 = 1;
const STREAM_CONDITIONAL: u64 = 2;
const STREAM_CHAIN_FIRST: u64 = 3;
const STREAM_CHAIN_SECOND: u64 = 4;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MigeConfig {
    pub ssge: SsgeConfig,
    /// Seed for all noise draws.
    pub seed: u64,
    /// When set, the marginal `H(z)` term is scored with the projected
    /// kernel. Its source dimension must equal the encoder output dimension.
    pub projector: Option<RandomProjector>,
}

impl MigeConfig {
    pub fn new(ssge: SsgeConfig, seed: u64) -> Self {
        MigeConfig {
            ssge,
            seed,
            projector: None,
        }
    }

    pub fn with_projector(mut self, projector: RandomProjector) -> Self {
        self.projector = Some(projector);
        self
    }
}

/// Fit statistics of one score-estimation term.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub term: &'static str,
    pub j_used: usize,
    pub eigen_mass: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Statistics of the first term; see `terms` for all of them.
    pub j_used: usize,
    pub eigen_mass: f64,
    pub bandwidth: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Set when a joint `(x, z)` batch has no density: `z` is a
    /// deterministic function of `x`, or numerically affine in it.
    pub singular_joint: bool,
    pub terms: Vec<FitSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub gradient: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl GradientReport {
    fn new(gradient: Vec<f64>, batch_size: usize, seed: u64, terms: Vec<FitSummary>) -> Self {
        let first = terms.first().cloned().expect("at least one term");
        GradientReport {
            gradient,
            diagnostics: Diagnostics {
                j_used: first.j_used,
                eigen_mass: first.eigen_mass,
                bandwidth: first.bandwidth,
                batch_size,
                seed,
                singular_joint: false,
                terms,
            },
        }
    }
}

/// `n × dim` standard normal draws from one stream of `seed`.
pub fn noise_matrix(n: usize, dim: usize, seed: u64, stream: u64) -> SampleMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let v = (0..n * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    SampleMatrix::from_shape_vec(n, dim, v).expect("shape")
}

fn validate_batch(enc: &dyn Encoder, x: &SampleMatrix) -> Result<()> {
    x.require_samples(2)?;
    check_dim(enc.input_dim(), x.dim())?;
    x.require_finite()
}

fn validate_noise(enc: &dyn Encoder, noise: &SampleMatrix, rows: usize) -> Result<()> {
    check_dim(rows, noise.n_samples())?;
    if enc.noise_dim() > 0 {
        check_dim(enc.noise_dim(), noise.dim())?;
    }
    Ok(())
}

fn noise_row(noise: &SampleMatrix, i: usize) -> &[f64] {
    if noise.dim() == 0 {
        &[]
    } else {
        noise.row(i)
    }
}

fn push_forward(enc: &dyn Encoder, x: &SampleMatrix, noise: &SampleMatrix) -> Result<SampleMatrix> {
    let rows: Vec<Vec<f64>> = (0..x.n_samples())
        .map(|i| enc.forward(x.row(i), noise_row(noise, i)))
        .collect();
    let z = SampleMatrix::from_rows(&rows)?;
    check_dim(enc.output_dim(), z.dim())?;
    Ok(z)
}

/// Scores of `z` at its own samples.
fn score_batch(
    z: &SampleMatrix,
    ssge: &SsgeConfig,
    projector: Option<&RandomProjector>,
    term: &'static str,
) -> Result<(Array2<f64>, FitSummary)> {
    let map = match projector {
        Some(p) => {
            check_dim(p.source_dim(), z.dim())?;
            Some(p.scaled_map())
        }
        None => None,
    };
    let (est, scores) = fit_with_map(z, ssge, map)?;
    let summary = FitSummary {
        term,
        j_used: est.num_terms(),
        eigen_mass: est.eigen_mass(),
        bandwidth: est.bandwidth(),
    };
    Ok((scores, summary))
}

fn skipped(term: &'static str, z: &SampleMatrix, ssge: &SsgeConfig) -> FitSummary {
    FitSummary {
        term,
        j_used: 0,
        eigen_mass: 1.0,
        bandwidth: ssge
            .bandwidth
            .unwrap_or_else(|| median_pairwise_distance(z.view())),
    }
}

fn axpy(acc: &mut [f64], a: f64, v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(o, x)| *o += a * x);
}

/// `∇ψ H(z)` for `z = E(x, ε)`, one noise draw per sample.
pub fn entropy_grad(enc: &dyn Encoder, x: &SampleMatrix, cfg: &MigeConfig) -> Result<GradientReport> {
    let noise = noise_matrix(x.n_samples(), enc.noise_dim(), cfg.seed, STREAM_MARGINAL);
    entropy_grad_with_noise(enc, x, &noise, cfg)
}

/// [`entropy_grad`] with explicit noise (one row per sample).
pub fn entropy_grad_with_noise(
    enc: &dyn Encoder,
    x: &SampleMatrix,
    noise: &SampleMatrix,
    cfg: &MigeConfig,
) -> Result<GradientReport> {
    cfg.ssge.validate()?;
    validate_batch(enc, x)?;
    validate_noise(enc, noise, x.n_samples())?;
    let n = x.n_samples();
    let z = push_forward(enc, x, noise)?;
    if enc.param_count() == 0 {
        let summary = skipped("marginal", &z, &cfg.ssge);
        return Ok(GradientReport::new(Vec::new(), n, cfg.seed, vec![summary]));
    }
    let (scores, summary) = score_batch(&z, &cfg.ssge, cfg.projector.as_ref(), "marginal")?;
    let mut grad = vec![0.0; enc.param_count()];
    for i in 0..n {
        let s = scores.row(i).to_vec();
        axpy(&mut grad, 1.0, &enc.pjvp(x.row(i), noise_row(noise, i), &s));
    }
    grad.iter_mut().for_each(|g| *g *= -1.0 / n as f64);
    Ok(GradientReport::new(grad, n, cfg.seed, vec![summary]))
}

/// `∇ψ H(x, z)`. Only the `z`-block of the joint score contributes since `x`
/// does not depend on `ψ`.
pub fn joint_entropy_grad(
    enc: &dyn Encoder,
    x: &SampleMatrix,
    cfg: &MigeConfig,
) -> Result<GradientReport> {
    let noise = noise_matrix(x.n_samples(), enc.noise_dim(), cfg.seed, STREAM_MARGINAL);
    joint_entropy_grad_with_noise(enc, x, &noise, cfg)
}

pub fn joint_entropy_grad_with_noise(
    enc: &dyn Encoder,
    x: &SampleMatrix,
    noise: &SampleMatrix,
    cfg: &MigeConfig,
) -> Result<GradientReport> {
    cfg.ssge.validate()?;
    validate_batch(enc, x)?;
    validate_noise(enc, noise, x.n_samples())?;
    let n = x.n_samples();
    let dx = x.dim();
    let z = push_forward(enc, x, noise)?;
    let joint = x.hstack(&z)?;
    let singular = enc.noise_dim() == 0 || affine_in(&z, x)?;
    let mut report = if enc.param_count() == 0 {
        let summary = skipped("joint", &joint, &cfg.ssge);
        GradientReport::new(Vec::new(), n, cfg.seed, vec![summary])
    } else {
        let (scores, summary) = score_batch(&joint, &cfg.ssge, None, "joint")?;
        let mut grad = vec![0.0; enc.param_count()];
        for i in 0..n {
            let s_z: Vec<f64> = scores.row(i).iter().skip(dx).copied().collect();
            axpy(&mut grad, 1.0, &enc.pjvp(x.row(i), noise_row(noise, i), &s_z));
        }
        grad.iter_mut().for_each(|g| *g *= -1.0 / n as f64);
        GradientReport::new(grad, n, cfg.seed, vec![summary])
    };
    report.diagnostics.singular_joint = singular;
    Ok(report)
}

/// True when every column of `z` is reproduced by an affine function of `x`
/// up to a residual of `1e-12` of its spread.
fn affine_in(z: &SampleMatrix, x: &SampleMatrix) -> Result<bool> {
    let n = x.n_samples();
    let p = x.dim() + 1;
    let mut design = Array2::<f64>::ones((n, p));
    design.slice_mut(ndarray::s![.., 1..]).assign(x.as_array());
    let mut gram = design.t().dot(&design);
    let ridge = 1e-12 * gram.diag().iter().fold(0.0f64, |m, v| m.max(*v));
    gram.diag_mut().iter_mut().for_each(|v| *v += ridge);
    let coef = match solve_spd(&gram, &design.t().dot(z.as_array())) {
        Ok(c) => c,
        Err(_) => return Ok(false),
    };
    let resid = z.as_array() - &design.dot(&coef);
    for (j, col) in z.as_array().columns().into_iter().enumerate() {
        let mean = col.mean().unwrap_or(0.0);
        let tss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let rss: f64 = resid.column(j).iter().map(|v| v * v).sum();
        if rss > 1e-12 * tss.max(f64::MIN_POSITIVE) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `∇ψ I(x; z) = ∇ψ H(z) - ∇ψ H(x, z)` on a shared batch and noise.
pub fn mi_grad_circ1(enc: &dyn Encoder, x: &SampleMatrix, cfg: &MigeConfig) -> Result<GradientReport> {
    let noise = noise_matrix(x.n_samples(), enc.noise_dim(), cfg.seed, STREAM_MARGINAL);
    let marginal = entropy_grad_with_noise(enc, x, &noise, cfg)?;
    let joint = joint_entropy_grad_with_noise(enc, x, &noise, cfg)?;
    let grad = marginal
        .gradient
        .iter()
        .zip(&joint.gradient)
        .map(|(a, b)| a - b)
        .collect();
    let mut terms = marginal.diagnostics.terms;
    terms.extend(joint.diagnostics.terms);
    let mut report = GradientReport::new(grad, x.n_samples(), cfg.seed, terms);
    report.diagnostics.singular_joint = joint.diagnostics.singular_joint;
    Ok(report)
}

/// `∇ψ I(h; z) = ∇ψ H(h) + ∇ψ H(z) - ∇ψ H(h, z)` for `h = C(x, ε₁)`,
/// `z = f(h, ε₂)`. The parameter vector is `C`'s followed by `f`'s.
pub fn mi_grad_circ2(
    c_enc: &dyn Encoder,
    f_enc: &dyn Encoder,
    x: &SampleMatrix,
    cfg: &MigeConfig,
) -> Result<GradientReport> {
    let n = x.n_samples();
    let e1 = noise_matrix(n, c_enc.noise_dim(), cfg.seed, STREAM_CHAIN_FIRST);
    let e2 = noise_matrix(n, f_enc.noise_dim(), cfg.seed, STREAM_CHAIN_SECOND);
    mi_grad_circ2_with_noise(c_enc, f_enc, x, &e1, &e2, cfg)
}

pub fn mi_grad_circ2_with_noise(
    c_enc: &dyn Encoder,
    f_enc: &dyn Encoder,
    x: &SampleMatrix,
    e1: &SampleMatrix,
    e2: &SampleMatrix,
    cfg: &MigeConfig,
) -> Result<GradientReport> {
    cfg.ssge.validate()?;
    validate_batch(c_enc, x)?;
    check_dim(c_enc.output_dim(), f_enc.input_dim())?;
    let n = x.n_samples();
    validate_noise(c_enc, e1, n)?;
    validate_noise(f_enc, e2, n)?;
    let h = push_forward(c_enc, x, e1)?;
    let z = push_forward(f_enc, &h, e2)?;
    let hz = h.hstack(&z)?;
    let singular = f_enc.noise_dim() == 0 || affine_in(&z, &h)?;
    let (pc, pf) = (c_enc.param_count(), f_enc.param_count());
    if pc + pf == 0 {
        let terms = vec![
            skipped("h", &h, &cfg.ssge),
            skipped("z", &z, &cfg.ssge),
            skipped("joint", &hz, &cfg.ssge),
        ];
        let mut report = GradientReport::new(Vec::new(), n, cfg.seed, terms);
        report.diagnostics.singular_joint = singular;
        return Ok(report);
    }
    let (s_h, t_h) = score_batch(&h, &cfg.ssge, None, "h")?;
    let (s_z, t_z) = score_batch(&z, &cfg.ssge, cfg.projector.as_ref(), "z")?;
    let (s_hz, t_hz) = score_batch(&hz, &cfg.ssge, None, "joint")?;
    let dh = h.dim();

    // Accumulates -(1/n) Σ [(∂h/∂ψ)ᵀ a_h + (∂z/∂ψ)ᵀ a_z] with sign `sign`.
    let mut grad = vec![0.0; pc + pf];
    let mut add = |i: usize, a_h: &[f64], a_z: &[f64], sign: f64| {
        let (xi, n1, hi, n2) = (x.row(i), noise_row(e1, i), h.row(i), noise_row(e2, i));
        let mut cot_h = f_enc.input_vjp(hi, n2, a_z);
        axpy(&mut cot_h, 1.0, a_h);
        let (gc, gf) = grad.split_at_mut(pc);
        axpy(gc, sign, &c_enc.pjvp(xi, n1, &cot_h));
        axpy(gf, sign, &f_enc.pjvp(hi, n2, a_z));
    };
    let zero_h = vec![0.0; dh];
    let zero_z = vec![0.0; z.dim()];
    for i in 0..n {
        let joint = s_hz.row(i).to_vec();
        add(i, &s_h.row(i).to_vec(), &zero_z, 1.0);
        add(i, &zero_h, &s_z.row(i).to_vec(), 1.0);
        add(i, &joint[..dh], &joint[dh..], -1.0);
    }
    grad.iter_mut().for_each(|g| *g *= -1.0 / n as f64);
    let mut report = GradientReport::new(grad, n, cfg.seed, vec![t_h, t_z, t_hz]);
    report.diagnostics.singular_joint = singular;
    Ok(report)
}

/// `∇ψ H(z | x)` with `noise_draws` noise samples per input.
///
/// Uses the encoder's closed-form conditional score when available and
/// otherwise fits a score estimator per input on its `noise_draws` outputs.
pub fn cond_entropy_grad(
    enc: &dyn Encoder,
    x: &SampleMatrix,
    noise_draws: usize,
    cfg: &MigeConfig,
) -> Result<GradientReport> {
    let noise = noise_matrix(
        x.n_samples() * noise_draws,
        enc.noise_dim(),
        cfg.seed,
        STREAM_CONDITIONAL,
    );
    cond_entropy_grad_with_noise(enc, x, &noise, noise_draws, cfg)
}

/// [`cond_entropy_grad`] with explicit noise; row `i·L + l` is draw `l` for
/// input `i`.
pub fn cond_entropy_grad_with_noise(
    enc: &dyn Encoder,
    x: &SampleMatrix,
    noise: &SampleMatrix,
    noise_draws: usize,
    cfg: &MigeConfig,
) -> Result<GradientReport> {
    cfg.ssge.validate()?;
    validate_batch(enc, x)?;
    if enc.noise_dim() == 0 {
        return Err(Error::invalid(
            "conditional entropy gradient needs a stochastic encoder",
        ));
    }
    let n = x.n_samples();
    let l = noise_draws;
    validate_noise(enc, noise, n * l)?;
    let analytic = l > 0
        && enc
            .conditional_score(x.row(0), &enc.forward(x.row(0), noise.row(0)))
            .is_some();
    let needed = if analytic { 1 } else { 2 };
    if l < needed {
        return Err(Error::InsufficientConditionalSamples { needed, got: l });
    }
    let p = enc.param_count();
    let mut grad = vec![0.0; p];
    let mut fits: Vec<FitSummary> = Vec::new();
    if p > 0 {
        for i in 0..n {
            let xi = x.row(i);
            let zs: Vec<Vec<f64>> = (0..l).map(|k| enc.forward(xi, noise.row(i * l + k))).collect();
            let scores: Vec<Vec<f64>> = if analytic {
                zs.iter()
                    .map(|z| enc.conditional_score(xi, z).expect("closed form"))
                    .collect()
            } else {
                let batch = SampleMatrix::from_rows(&zs)?;
                let (s, summary) = score_batch(&batch, &cfg.ssge, None, "conditional")?;
                fits.push(summary);
                s.rows().into_iter().map(|r| r.to_vec()).collect()
            };
            for (k, s) in scores.iter().enumerate() {
                axpy(&mut grad, 1.0, &enc.pjvp(xi, noise.row(i * l + k), s));
            }
        }
        grad.iter_mut().for_each(|g| *g *= -1.0 / (n * l) as f64);
    }
    let summary = if fits.is_empty() {
        FitSummary {
            term: "conditional",
            j_used: 0,
            eigen_mass: 1.0,
            bandwidth: 0.0,
        }
    } else {
        let m = fits.len() as f64;
        FitSummary {
            term: "conditional",
            j_used: fits.iter().map(|f| f.j_used).max().unwrap_or(0),
            eigen_mass: fits.iter().map(|f| f.eigen_mass).sum::<f64>() / m,
            bandwidth: fits.iter().map(|f| f.bandwidth).sum::<f64>() / m,
        }
    };
    Ok(GradientReport::new(grad, n, cfg.seed, vec![summary]))
}

/// `∇ψ I(x; z) = ∇ψ H(z) - ∇ψ H(z | x)` for a stochastic encoder. The
/// marginal term uses its own noise draws, independent of the conditional
/// ones.
pub fn mi_grad_circ3(
    enc: &dyn Encoder,
    x: &SampleMatrix,
    noise_draws: usize,
    cfg: &MigeConfig,
) -> Result<GradientReport> {
    let n = x.n_samples();
    let marginal = noise_matrix(n, enc.noise_dim(), cfg.seed, STREAM_MARGINAL);
    let conditional = noise_matrix(n * noise_draws, enc.noise_dim(), cfg.seed, STREAM_CONDITIONAL);
    mi_grad_circ3_with_noise(enc, x, &marginal, &conditional, noise_draws, cfg)
}

pub fn mi_grad_circ3_with_noise(
    enc: &dyn Encoder,
    x: &SampleMatrix,
    marginal_noise: &SampleMatrix,
    conditional_noise: &SampleMatrix,
    noise_draws: usize,
    cfg: &MigeConfig,
) -> Result<GradientReport> {
    let cond = cond_entropy_grad_with_noise(enc, x, conditional_noise, noise_draws, cfg)?;
    let marg = entropy_grad_with_noise(enc, x, marginal_noise, cfg)?;
    let grad = marg
        .gradient
        .iter()
        .zip(&cond.gradient)
        .map(|(a, b)| a - b)
        .collect();
    let mut terms = marg.diagnostics.terms;
    terms.extend(cond.diagnostics.terms);
    Ok(GradientReport::new(grad, x.n_samples(), cfg.seed, terms))
}
