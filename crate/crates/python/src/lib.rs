//! Python bindings for the spectral score and mutual-information gradient
//! estimators. Matrices cross the boundary as lists of rows.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use mige_core::encoder::{GaussianChannelEncoder as CoreChannel, LinearEncoder as CoreLinear};
use mige_core::error::Error;
use mige_core::harness::{self, Command, Overrides, RunConfig};
use mige_core::kernels::{median_heuristic, RbfKernel as CoreRbf};
use mige_core::mige::{self as core_mige, GradientReport, MigeConfig};
use mige_core::oracles::ToyProblem;
use mige_core::projection::{self, RandomProjector as CoreProjector};
use mige_core::sample::SampleMatrix;
use mige_core::ssge::{self, FittedScoreEstimator, SsgeConfig};

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn samples(rows: Vec<Vec<f64>>) -> PyResult<SampleMatrix> {
    SampleMatrix::from_rows(&rows).map_err(py_err)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<ndarray::Array2<f64>> {
    Ok(samples(rows)?.into_inner())
}

fn to_rows(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn config(bandwidth: Option<f64>, threshold: f64, max_j: Option<usize>) -> PyResult<SsgeConfig> {
    let cfg = SsgeConfig {
        bandwidth,
        mass_threshold: threshold,
        max_j,
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

#[pyclass(module = "mige_py", frozen)]
struct RbfKernel {
    inner: CoreRbf,
}

#[pymethods]
impl RbfKernel {
    #[new]
    fn new(bandwidth: f64) -> PyResult<Self> {
        Ok(RbfKernel {
            inner: CoreRbf::new(bandwidth).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn with_median_heuristic(x: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(RbfKernel {
            inner: CoreRbf::with_median_heuristic(&samples(x)?).map_err(py_err)?,
        })
    }

    #[getter]
    fn bandwidth(&self) -> f64 {
        self.inner.bandwidth()
    }

    fn eval(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        self.inner.eval(&x, &y).map_err(py_err)
    }

    fn grad_x(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.grad_x(&x, &y).map_err(py_err)
    }

    fn gram(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.gram(&samples(x)?).map_err(py_err)?))
    }

    fn __repr__(&self) -> String {
        format!("RbfKernel(bandwidth={})", self.inner.bandwidth())
    }
}

#[pyclass(module = "mige_py", frozen)]
struct ScoreEstimator {
    inner: FittedScoreEstimator,
}

#[pymethods]
impl ScoreEstimator {
    fn score(&self, q: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.score(&samples(q)?).map_err(py_err)?))
    }

    fn eigenfunctions(&self, q: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&self.inner.eigenfunctions(&samples(q)?).map_err(py_err)?))
    }

    #[getter]
    fn num_terms(&self) -> usize {
        self.inner.num_terms()
    }

    #[getter]
    fn eigen_mass(&self) -> f64 {
        self.inner.eigen_mass()
    }

    #[getter]
    fn bandwidth(&self) -> f64 {
        self.inner.bandwidth()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    #[getter]
    fn beta(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.beta())
    }

    fn __repr__(&self) -> String {
        format!(
            "ScoreEstimator(samples={}, dim={}, terms={}, bandwidth={})",
            self.inner.base_samples().n_samples(),
            self.inner.dim(),
            self.inner.num_terms(),
            self.inner.bandwidth()
        )
    }
}

#[pyclass(module = "mige_py", frozen)]
struct RandomProjector {
    inner: CoreProjector,
}

#[pymethods]
impl RandomProjector {
    #[new]
    fn new(d: usize, k: usize, seed: u64) -> PyResult<Self> {
        Ok(RandomProjector {
            inner: CoreProjector::new(d, k, seed).map_err(py_err)?,
        })
    }

    #[getter]
    fn matrix(&self) -> Vec<Vec<f64>> {
        to_rows(self.inner.matrix())
    }

    #[getter]
    fn source_dim(&self) -> usize {
        self.inner.source_dim()
    }

    #[getter]
    fn target_dim(&self) -> usize {
        self.inner.target_dim()
    }

    fn project(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(self.inner.project(&samples(x)?).map_err(py_err)?.as_array()))
    }

    fn __repr__(&self) -> String {
        format!(
            "RandomProjector(d={}, k={}, seed={})",
            self.inner.source_dim(),
            self.inner.target_dim(),
            self.inner.seed()
        )
    }
}

/// Gradient plus fit diagnostics, as returned by the estimator functions.
#[pyclass(module = "mige_py", frozen, get_all)]
struct Gradient {
    gradient: Vec<f64>,
    j_used: usize,
    eigen_mass: f64,
    bandwidth: f64,
    batch_size: usize,
    seed: u64,
}

impl From<GradientReport> for Gradient {
    fn from(r: GradientReport) -> Self {
        let d = r.diagnostics;
        Gradient {
            gradient: r.gradient,
            j_used: d.j_used,
            eigen_mass: d.eigen_mass,
            bandwidth: d.bandwidth,
            batch_size: d.batch_size,
            seed: d.seed,
        }
    }
}

#[pymethods]
impl Gradient {
    fn __repr__(&self) -> String {
        format!("Gradient({:?}, j_used={})", self.gradient, self.j_used)
    }
}

#[pyfunction]
#[pyo3(signature = (x, bandwidth=None, threshold=0.94, max_j=None))]
fn fit(
    x: Vec<Vec<f64>>,
    bandwidth: Option<f64>,
    threshold: f64,
    max_j: Option<usize>,
) -> PyResult<ScoreEstimator> {
    let cfg = config(bandwidth, threshold, max_j)?;
    Ok(ScoreEstimator {
        inner: ssge::fit(&samples(x)?, &cfg).map_err(py_err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (x, projector, bandwidth=None, threshold=0.94, max_j=None))]
fn fit_scalable(
    x: Vec<Vec<f64>>,
    projector: &RandomProjector,
    bandwidth: Option<f64>,
    threshold: f64,
    max_j: Option<usize>,
) -> PyResult<ScoreEstimator> {
    let cfg = config(bandwidth, threshold, max_j)?;
    Ok(ScoreEstimator {
        inner: projection::fit_scalable(&samples(x)?, &cfg, &projector.inner).map_err(py_err)?,
    })
}

#[pyfunction(name = "median_heuristic")]
fn py_median_heuristic(x: Vec<Vec<f64>>) -> PyResult<f64> {
    median_heuristic(&samples(x)?).map_err(py_err)
}

#[pyfunction]
fn stein_residual(kernel: &RbfKernel, x: Vec<Vec<f64>>, scores: Vec<Vec<f64>>) -> PyResult<f64> {
    ssge::stein_residual(&kernel.inner, &samples(x)?, &matrix(scores)?).map_err(py_err)
}

/// `∂H(z)/∂W` for `z = W x + σ ε`.
#[pyfunction]
#[pyo3(signature = (w, x, noise_std=0.0, seed=0, bandwidth=None, threshold=0.94))]
fn linear_entropy_grad(
    w: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
    noise_std: f64,
    seed: u64,
    bandwidth: Option<f64>,
    threshold: f64,
) -> PyResult<Gradient> {
    let w = matrix(w)?;
    let enc = if noise_std > 0.0 {
        CoreLinear::with_noise(w, noise_std)
    } else {
        CoreLinear::new(w)
    }
    .map_err(py_err)?;
    let cfg = MigeConfig::new(config(bandwidth, threshold, None)?, seed);
    Ok(core_mige::entropy_grad(&enc, &samples(x)?, &cfg).map_err(py_err)?.into())
}

/// `∂I(x; z)/∂ρ` for the correlated-Gaussian channel on the supplied inputs.
#[pyfunction]
#[pyo3(signature = (x, rho, seed=0, bandwidth=None, threshold=0.94, projector=None))]
fn channel_mi_grad(
    x: Vec<Vec<f64>>,
    rho: f64,
    seed: u64,
    bandwidth: Option<f64>,
    threshold: f64,
    projector: Option<&RandomProjector>,
) -> PyResult<Gradient> {
    let x = samples(x)?;
    let enc = CoreChannel::new(rho, x.dim()).map_err(py_err)?;
    let mut cfg = MigeConfig::new(config(bandwidth, threshold, None)?, seed);
    cfg.projector = projector.map(|p| p.inner.clone());
    Ok(core_mige::mi_grad_circ3(&enc, &x, 1, &cfg).map_err(py_err)?.into())
}

/// `(∂I/∂ρ, I)` in closed form for the correlated-Gaussian toy problem.
#[pyfunction]
fn toy_analytic(d: usize, rho: f64) -> PyResult<(f64, f64)> {
    let p = ToyProblem::new(d, rho).map_err(py_err)?;
    Ok((p.analytic_mi_grad(), p.analytic_mi()))
}

/// Runs a harness command; returns the CSV text and whether all
/// tolerances were met.
#[pyfunction]
#[pyo3(signature = (command, seed=None, n=None, dims=None, rho_grid=None, threshold=None, bandwidth=None, rp_dims=None))]
#[allow(clippy::too_many_arguments)]
fn run_harness(
    command: &str,
    seed: Option<u64>,
    n: Option<usize>,
    dims: Option<Vec<usize>>,
    rho_grid: Option<Vec<f64>>,
    threshold: Option<f64>,
    bandwidth: Option<f64>,
    rp_dims: Option<Vec<usize>>,
) -> PyResult<(String, bool)> {
    let command: Command = command.parse().map_err(py_err)?;
    let flags = Overrides {
        seed,
        n,
        dims,
        rho_grid,
        mass_threshold: threshold,
        bandwidth,
        rp_dims,
        output_path: None,
    };
    let cfg = RunConfig::resolve(command, None, flags).map_err(py_err)?;
    let out = harness::run(&cfg).map_err(py_err)?;
    Ok((out.table.to_csv(), out.passed()))
}

#[pymodule]
fn mige_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RbfKernel>()?;
    m.add_class::<ScoreEstimator>()?;
    m.add_class::<RandomProjector>()?;
    m.add_class::<Gradient>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(fit_scalable, m)?)?;
    m.add_function(wrap_pyfunction!(py_median_heuristic, m)?)?;
    m.add_function(wrap_pyfunction!(stein_residual, m)?)?;
    m.add_function(wrap_pyfunction!(linear_entropy_grad, m)?)?;
    m.add_function(wrap_pyfunction!(channel_mi_grad, m)?)?;
    m.add_function(wrap_pyfunction!(toy_analytic, m)?)?;
    m.add_function(wrap_pyfunction!(run_harness, m)?)?;
    Ok(())
}
