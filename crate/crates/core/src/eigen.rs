//! Symmetric eigendecomposition and eigenvalue-mass truncation.
//!
//! [`sym_eig`] is a dense solver: Householder reduction to tridiagonal form
//! followed by implicit QL iterations (the classic `tred2`/`tql2` pair).
//! [`leading_eigenpairs`] returns only the top `J` eigenpairs needed to reach
//! a given fraction of spectral mass. Small matrices go through the dense
//! solver; large ones use Lanczos with full reorthogonalization and fall back
//! to the dense solver if the Krylov space grows too large.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Full eigendecomposition, eigenvalues sorted non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Array1<f64>,
    /// Column `j` is the unit eigenvector for `eigenvalues[j]`.
    pub eigenvectors: Array2<f64>,
}

/// The top `J` eigenpairs of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadingEigenpairs {
    pub eigenvalues: Array1<f64>,
    /// `n × J`, column `j` paired with `eigenvalues[j]`.
    pub eigenvectors: Array2<f64>,
    /// Fraction of positive spectral mass captured by the retained eigenvalues.
    pub eigen_mass: f64,
}

impl LeadingEigenpairs {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

const SYMMETRY_TOL: f64 = 1e-8;
/// Matrices up to this order always use the dense solver.
const DENSE_LIMIT: usize = 256;
/// Ritz pairs count as converged once `‖G y - θ y‖ <= RITZ_TOL · θ_max`.
const RITZ_TOL: f64 = 1e-10;
const LANCZOS_START_SEED: u64 = 0x5eed_1a2c_2f05;

/// Dense symmetric eigendecomposition.
///
/// The input is symmetrized as `(G + Gᵀ)/2` first. Eigenvectors are signed so
/// that their largest-magnitude entry is positive.
pub fn sym_eig(g: &ArrayView2<'_, f64>) -> Result<EigenDecomposition> {
    let n = validate_symmetric(g)?;
    if n == 0 {
        return Ok(EigenDecomposition {
            eigenvalues: Array1::zeros(0),
            eigenvectors: Array2::zeros((0, 0)),
        });
    }
    // Row-major storage of the transposed working matrix: `t[b * n + a]`
    // holds entry (a, b). For a symmetric input this is the input itself.
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[i * n + j] = 0.5 * (g[[i, j]] + g[[j, i]]);
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(n, &mut t, &mut d, &mut e);
    tql2(&mut d, &mut e, &mut t, n, 100 * n)?;

    let order = descending_order(&d);
    let mut eigenvalues = Array1::zeros(n);
    let mut eigenvectors = Array2::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        eigenvalues[col] = d[src];
        let row = &t[src * n..(src + 1) * n];
        let sign = sign_flip(row.iter().copied());
        for (r, v) in row.iter().enumerate() {
            eigenvectors[[r, col]] = sign * v;
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Smallest `J` whose leading eigenvalues hold at least `mass_threshold` of
/// the positive spectral mass. Negative eigenvalues count as zero.
pub fn select_top_j(eigenvalues: &[f64], mass_threshold: f64) -> Result<usize> {
    check_threshold(mass_threshold)?;
    let total: f64 = eigenvalues.iter().map(|&v| v.max(0.0)).sum();
    let positive = eigenvalues.iter().filter(|&&v| v > 0.0).count();
    if positive == 0 || !(total > 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    Ok(mass_cutoff(eigenvalues, mass_threshold, total).unwrap_or(positive).min(positive))
}

/// Leading eigenpairs of a symmetric matrix, truncated by eigenvalue mass
/// and optionally capped at `max_j` terms.
pub fn leading_eigenpairs(
    g: &ArrayView2<'_, f64>,
    mass_threshold: f64,
    max_j: Option<usize>,
) -> Result<LeadingEigenpairs> {
    check_threshold(mass_threshold)?;
    if max_j == Some(0) {
        return Err(Error::invalid("max_j must be at least 1"));
    }
    let n = validate_symmetric(g)?;
    if n > DENSE_LIMIT {
        if let Some(found) = lanczos(g, mass_threshold, max_j, (n / 3).max(DENSE_LIMIT))? {
            return Ok(found);
        }
    }
    dense_leading(g, mass_threshold, max_j)
}

fn dense_leading(
    g: &ArrayView2<'_, f64>,
    mass_threshold: f64,
    max_j: Option<usize>,
) -> Result<LeadingEigenpairs> {
    let eig = sym_eig(g)?;
    let values = eig.eigenvalues.as_slice().expect("contiguous");
    let mut j = select_top_j(values, mass_threshold)?;
    if let Some(cap) = max_j {
        j = j.min(cap);
    }
    let total: f64 = values.iter().map(|&v| v.max(0.0)).sum();
    let kept: f64 = values[..j].iter().sum();
    Ok(LeadingEigenpairs {
        eigenvalues: eig.eigenvalues.slice(ndarray::s![..j]).to_owned(),
        eigenvectors: eig.eigenvectors.slice(ndarray::s![.., ..j]).to_owned(),
        eigen_mass: (kept / total).min(1.0),
    })
}

/// Lanczos iteration with full reorthogonalization. Returns `None` when the
/// Krylov dimension would exceed `max_steps` before the requested pairs
/// converge.
fn lanczos(
    g: &ArrayView2<'_, f64>,
    mass_threshold: f64,
    max_j: Option<usize>,
    max_steps: usize,
) -> Result<Option<LeadingEigenpairs>> {
    let n = g.nrows();
    // Σλ = trace; negative eigenvalues of a near-PSD Gram matrix are rounding
    // noise, so the trace stands in for the positive mass.
    let total_mass: f64 = g.diag().sum();
    if !(total_mass > 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    let max_steps = max_steps.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(LANCZOS_START_SEED);
    let mut basis: Vec<f64> = Vec::with_capacity(max_steps * n);
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();

    let mut q = random_unit_orthogonal(&mut rng, &basis, n).expect("empty basis");
    let mut next_check = 16usize;
    loop {
        basis.extend_from_slice(&q);
        let m = alpha.len() + 1;
        let qv = ArrayView1::from(&q[..]);
        let mut w = g.dot(&qv).to_vec();
        let a = dot(&q, &w);
        alpha.push(a);
        reorthogonalize(&mut w, &basis, n);
        reorthogonalize(&mut w, &basis, n);
        let b = norm(&w);

        let scale = alpha.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let invariant = b <= 1e-12 * scale.max(f64::MIN_POSITIVE);
        if invariant || m >= next_check || m == max_steps {
            next_check = m + (m / 8).max(8);
            let (theta, last) = tridiagonal_ritz(&alpha, &beta, true)?;
            let theta_max = theta[0].abs();
            let needed = mass_cutoff(&theta, mass_threshold, total_mass);
            let j = match (needed, max_j) {
                (Some(j), Some(cap)) => Some(j.min(cap)),
                (Some(j), None) => Some(j),
                (None, Some(cap)) if cap <= m => Some(cap),
                _ => None,
            };
            if let Some(j) = j {
                let converged = theta[..j].iter().all(|&t| t > 0.0)
                    && (0..j).all(|i| (b * last[i]).abs() <= RITZ_TOL * theta_max);
                if converged {
                    return Ok(Some(ritz_pairs(&alpha, &beta, &basis, n, j, total_mass)?));
                }
            }
            if m == max_steps {
                return Ok(None);
            }
        }

        if invariant {
            // Krylov space is exhausted without reaching the mass target;
            // continue from a fresh direction orthogonal to the basis.
            match random_unit_orthogonal(&mut rng, &basis, n) {
                Some(fresh) => {
                    beta.push(0.0);
                    q = fresh;
                }
                None => return Ok(None),
            }
        } else {
            beta.push(b);
            q = w.iter().map(|v| v / b).collect();
        }
    }
}

fn ritz_pairs(
    alpha: &[f64],
    beta: &[f64],
    basis: &[f64],
    n: usize,
    j: usize,
    total_mass: f64,
) -> Result<LeadingEigenpairs> {
    let m = alpha.len();
    let (theta, s) = tridiagonal_ritz(alpha, beta, false)?;
    let mut eigenvectors = Array2::<f64>::zeros((n, j));
    for i in 0..j {
        let coeffs = &s[i * m..(i + 1) * m];
        let mut y = vec![0.0; n];
        for (k, &c) in coeffs.iter().enumerate() {
            let qk = &basis[k * n..(k + 1) * n];
            for (yy, qq) in y.iter_mut().zip(qk) {
                *yy += c * qq;
            }
        }
        let norm_y = norm(&y);
        let sign = sign_flip(y.iter().copied()) / norm_y;
        for (r, v) in y.iter().enumerate() {
            eigenvectors[[r, i]] = sign * v;
        }
    }
    let kept: f64 = theta[..j].iter().sum();
    Ok(LeadingEigenpairs {
        eigenvalues: Array1::from(theta[..j].to_vec()),
        eigenvectors,
        eigen_mass: (kept / total_mass).min(1.0),
    })
}

/// Eigenpairs of the Lanczos tridiagonal matrix, sorted descending.
///
/// With `last_only`, the second value holds only the final component of each
/// eigenvector (enough for residual estimates); otherwise it holds whole
/// eigenvectors as rows of an `m × m` row-major buffer.
fn tridiagonal_ritz(alpha: &[f64], beta: &[f64], last_only: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = alpha.len();
    let mut d = alpha.to_vec();
    let mut e = vec![0.0; m];
    e[1..m].copy_from_slice(&beta[..m - 1]);
    let width = if last_only { 1 } else { m };
    let mut z = vec![0.0; m * width];
    if last_only {
        z[m - 1] = 1.0;
    } else {
        for i in 0..m {
            z[i * m + i] = 1.0;
        }
    }
    tql2(&mut d, &mut e, &mut z, width, 100 * m)?;
    let order = descending_order(&d);
    let theta = order.iter().map(|&i| d[i]).collect();
    let mut vecs = Vec::with_capacity(m * width);
    for &i in &order {
        vecs.extend_from_slice(&z[i * width..(i + 1) * width]);
    }
    Ok((theta, vecs))
}

fn check_threshold(mass_threshold: f64) -> Result<()> {
    if mass_threshold > 0.0 && mass_threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "mass threshold must lie in (0, 1], got {mass_threshold}"
        )))
    }
}

/// Smallest prefix length of `sorted_desc` whose positive mass reaches
/// `threshold · total`, if any.
fn mass_cutoff(sorted_desc: &[f64], threshold: f64, total: f64) -> Option<usize> {
    let target = threshold * total - 1e-12 * total;
    let mut cum = 0.0;
    for (i, &v) in sorted_desc.iter().enumerate() {
        cum += v.max(0.0);
        if cum >= target {
            return Some(i + 1);
        }
    }
    None
}

fn validate_symmetric(g: &ArrayView2<'_, f64>) -> Result<usize> {
    let (n, m) = g.dim();
    if n != m {
        return Err(Error::invalid(format!("matrix must be square, got {n}x{m}")));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let scale = g.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (g[[i, j]] - g[[j, i]]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::invalid(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(n)
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// +1 or -1 so that the largest-magnitude entry (first on ties) is positive.
fn sign_flip(values: impl Iterator<Item = f64>) -> f64 {
    let mut best = 0.0f64;
    for v in values {
        if v.abs() > best.abs() {
            best = v;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// One classical Gram-Schmidt pass of `w` against the rows of `basis`.
fn reorthogonalize(w: &mut [f64], basis: &[f64], n: usize) {
    let coeffs: Vec<f64> = basis.chunks_exact(n).map(|q| dot(q, w)).collect();
    for (q, c) in basis.chunks_exact(n).zip(coeffs) {
        for (wi, qi) in w.iter_mut().zip(q) {
            *wi -= c * qi;
        }
    }
}

fn random_unit_orthogonal(rng: &mut ChaCha8Rng, basis: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let before = norm(&v);
    reorthogonalize(&mut v, basis, n);
    reorthogonalize(&mut v, basis, n);
    let after = norm(&v);
    if after <= 1e-10 * before {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= after);
    Some(v)
}

/// Householder reduction of a symmetric matrix to tridiagonal form.
///
/// `t` holds the matrix transposed (entry `(a, b)` at `t[b * n + a]`); on
/// return its rows are the columns of the accumulated orthogonal transform,
/// `d` the diagonal and `e[1..]` the subdiagonal.
fn tred2(n: usize, t: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    macro_rules! v {
        ($a:expr, $b:expr) => {
            t[($b) * n + ($a)]
        };
    }
    for j in 0..n {
        d[j] = v!(n - 1, j);
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v!(i - 1, j);
                v!(i, j) = 0.0;
                v!(j, i) = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v!(j, i) = f;
                g = e[j] + v!(j, j) * f;
                let col = &t[j * n..j * n + i];
                for k in (j + 1)..i {
                    g += col[k] * d[k];
                    e[k] += col[k] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                let col = &mut t[j * n..j * n + i];
                for k in j..i {
                    col[k] -= f * e[k] + g * d[k];
                }
                d[j] = v!(i - 1, j);
                v!(i, j) = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n.saturating_sub(1) {
        v!(n - 1, i) = v!(i, i);
        v!(i, i) = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v!(k, i + 1) / h;
            }
            for j in 0..=i {
                let (lo, hi) = t.split_at_mut((i + 1) * n);
                let next = &hi[..=i];
                let col = &mut lo[j * n..j * n + i + 1];
                let g: f64 = next.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
                for k in 0..=i {
                    col[k] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v!(k, i + 1) = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v!(n - 1, j);
        v!(n - 1, j) = 0.0;
    }
    v!(n - 1, n - 1) = 1.0;
    e[0] = 0.0;
}

/// Implicit QL iterations on a symmetric tridiagonal matrix (diagonal `d`,
/// subdiagonal `e[1..]`), accumulating the rotations into `z`.
///
/// `z` stores one row of `width` tracked components per eigenvector. Passing
/// the identity yields full eigenvectors; passing only the last unit row
/// tracks just the last component of each eigenvector.
fn tql2(d: &mut [f64], e: &mut [f64], z: &mut [f64], width: usize, max_iter: usize) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    let mut iterations = 0usize;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Err(Error::Convergence {
                        iterations,
                        residual: e[l].abs(),
                    });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = z.split_at_mut((i + 1) * width);
                    let zi = &mut lo[i * width..];
                    let zi1 = &mut hi[..width];
                    for (a, b) in zi.iter_mut().zip(zi1.iter_mut()) {
                        let hk = *b;
                        *b = s * *a + c * hk;
                        *a = c * *a - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::RbfKernel;
    use crate::sample::SampleMatrix;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn check_invariants(g: &Array2<f64>, eig: &EigenDecomposition) {
        let n = g.nrows();
        let v = &eig.eigenvectors;
        let gram = v.t().dot(v) - Array2::<f64>::eye(n);
        assert!(max_abs(&gram) <= 1e-8, "orthonormality {}", max_abs(&gram));
        let recon = v.dot(&Array2::from_diag(&eig.eigenvalues)).dot(&v.t());
        assert!(max_abs(&(&recon - g)) <= 1e-6 * max_abs(g).max(f64::MIN_POSITIVE));
        for w in eig.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    fn random_orthonormal(n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        // Gram-Schmidt on a Gaussian matrix
        let mut q = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            for _ in 0..2 {
                for k in 0..j {
                    let c: f64 = (0..n).map(|i| q[[i, k]] * v[i]).sum();
                    for i in 0..n {
                        v[i] -= c * q[[i, k]];
                    }
                }
            }
            let nv = norm(&v);
            for i in 0..n {
                q[[i, j]] = v[i] / nv;
            }
        }
        q
    }

    #[test]
    fn identity() {
        let g = Array2::<f64>::eye(3);
        let eig = sym_eig(&g.view()).unwrap();
        assert_eq!(eig.eigenvalues.to_vec(), vec![1.0, 1.0, 1.0]);
        check_invariants(&g, &eig);
    }

    #[test]
    fn two_by_two() {
        let g = array![[2.0, 1.0], [1.0, 2.0]];
        let eig = sym_eig(&g.view()).unwrap();
        assert!((eig.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((eig.eigenvalues[1] - 1.0).abs() < 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = eig.eigenvectors.column(0);
        assert!((v0[0] - r).abs() < 1e-14 && (v0[1] - r).abs() < 1e-14);
        let v1 = eig.eigenvectors.column(1);
        // largest-magnitude entry positive; ties resolve to the first entry
        assert!((v1[0].abs() - r).abs() < 1e-14 && (v1[0] + v1[1]).abs() < 1e-14);
        check_invariants(&g, &eig);
    }

    #[test]
    fn diagonal() {
        let g = Array2::from_diag(&array![2.0, 5.0, 0.0]);
        let eig = sym_eig(&g.view()).unwrap();
        assert_eq!(eig.eigenvalues.to_vec(), vec![5.0, 2.0, 0.0]);
        assert_eq!(eig.eigenvectors.column(0).to_vec(), vec![0.0, 1.0, 0.0]);
        assert_eq!(eig.eigenvectors.column(1).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(eig.eigenvectors.column(2).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        let g = array![[1.0, f64::NAN], [f64::NAN, 1.0]];
        assert!(sym_eig(&g.view()).unwrap_err().is_invalid_argument());
        let g = array![[1.0, 2.0], [0.0, 1.0]];
        assert!(sym_eig(&g.view()).is_err());
        let g = Array2::<f64>::zeros((2, 3));
        assert!(sym_eig(&g.view()).is_err());
    }

    #[test]
    fn round_trip_recovers_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &n in &[1usize, 2, 5, 17, 40] {
            let q = random_orthonormal(n, &mut rng);
            let mut lam: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..10.0)).collect();
            lam.sort_by(|a, b| b.total_cmp(a));
            let g = q.dot(&Array2::from_diag(&Array1::from(lam.clone()))).dot(&q.t());
            let g = (&g + &g.t()) * 0.5;
            let eig = sym_eig(&g.view()).unwrap();
            for (a, b) in eig.eigenvalues.iter().zip(&lam) {
                assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
            }
            check_invariants(&g, &eig);
        }
    }

    #[test]
    fn trace_equals_eigenvalue_sum_for_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<f64> = (0..60 * 3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = SampleMatrix::from_shape_vec(60, 3, vals).unwrap();
        let g = RbfKernel::new(1.3).unwrap().gram(&x).unwrap();
        let eig = sym_eig(&g.view()).unwrap();
        let sum: f64 = eig.eigenvalues.sum();
        assert!((sum - 60.0).abs() <= 1e-8 * 60.0);
        check_invariants(&g, &eig);
    }

    #[test]
    fn select_examples() {
        assert_eq!(select_top_j(&[4.0, 3.0, 2.0, 1.0], 0.69).unwrap(), 2);
        assert_eq!(select_top_j(&[4.0, 3.0, 2.0, 1.0], 1.0).unwrap(), 4);
        assert_eq!(select_top_j(&[4.0, 3.0, 0.0, -1e-9], 1.0).unwrap(), 2);
        assert_eq!(select_top_j(&[10.0, -0.001], 0.5).unwrap(), 1);
        assert_eq!(select_top_j(&[0.0, -1.0], 0.5), Err(Error::DegenerateSpectrum));
        assert!(select_top_j(&[1.0], 0.0).is_err());
        assert!(select_top_j(&[1.0], 1.5).is_err());
    }

    proptest! {
        #[test]
        fn select_is_monotone_in_threshold(
            mut vals in prop::collection::vec(-0.5f64..10.0, 1..20),
            a in 0.01f64..1.0,
            b in 0.01f64..1.0,
        ) {
            vals.sort_by(|x, y| y.total_cmp(x));
            prop_assume!(vals[0] > 0.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(select_top_j(&vals, lo).unwrap() <= select_top_j(&vals, hi).unwrap());
            let full = vals.iter().filter(|&&v| v > 0.0).count();
            prop_assert_eq!(select_top_j(&vals, 1.0).unwrap(), full);
        }
    }

    fn gaussian_gram(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let x = SampleMatrix::from_shape_vec(n, d, vals).unwrap();
        let k = RbfKernel::with_median_heuristic(&x).unwrap();
        k.gram(&x).unwrap()
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        for &(d, thr) in &[(1usize, 0.94), (3, 0.94), (4, 0.99)] {
            let g = gaussian_gram(300, d, d as u64);
            let dense = dense_leading(&g.view(), thr, None).unwrap();
            let lz = lanczos(&g.view(), thr, None, 300).unwrap().expect("converged");
            assert_eq!(dense.len(), lz.len());
            for (a, b) in dense.eigenvalues.iter().zip(lz.eigenvalues.iter()) {
                assert!((a - b).abs() <= 1e-9 * dense.eigenvalues[0]);
            }
            for j in 0..dense.len() {
                let c: f64 = dense
                    .eigenvectors
                    .column(j)
                    .iter()
                    .zip(lz.eigenvectors.column(j).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                assert!((c - 1.0).abs() < 1e-6, "pair {j}: overlap {c}");
            }
            assert!((dense.eigen_mass - lz.eigen_mass).abs() < 1e-9);
        }
    }

    #[test]
    fn lanczos_handles_rank_deficient_gram() {
        // two clusters of identical points: rank 2
        let mut g = Array2::<f64>::zeros((400, 400));
        for i in 0..400 {
            for j in 0..400 {
                g[[i, j]] = if (i < 200) == (j < 200) { 1.0 } else { 0.25 };
            }
        }
        let lz = leading_eigenpairs(&g.view(), 1.0, None).unwrap();
        assert_eq!(lz.len(), 2);
        assert!((lz.eigenvalues[0] - 250.0).abs() < 1e-8);
        assert!((lz.eigenvalues[1] - 150.0).abs() < 1e-8);
    }

    #[test]
    fn leading_respects_cap() {
        let g = gaussian_gram(120, 2, 5);
        let capped = leading_eigenpairs(&g.view(), 0.999, Some(3)).unwrap();
        assert_eq!(capped.len(), 3);
        assert!(capped.eigen_mass < 0.999);
        assert!(leading_eigenpairs(&g.view(), 0.9, Some(0)).is_err());
    }
}
