//! Python bindings. Arrays cross the boundary as lists of floats.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ctkrm::covariance::build_declared;
use ctkrm::estimator::{fit_with_transient, RegularizedEstimate};
use ctkrm::hyperopt::{self, OptimizerSettings};
use ctkrm::simulator::{make_trial as core_make_trial, CtTransferFunction, DataBankSpec};

fn err(e: ctkrm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "DcKernel", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyDcKernel(ctkrm::DcKernel);

#[pymethods]
impl PyDcKernel {
    #[new]
    fn new(alpha: f64, beta: f64, lambda_: f64) -> PyResult<Self> {
        ctkrm::DcKernel::new(alpha, beta, lambda_).map(Self).map_err(err)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.0.beta()
    }

    #[getter(lambda_)]
    fn lambda(&self) -> f64 {
        self.0.lambda()
    }

    fn value(&self, tau: f64, tau2: f64) -> PyResult<f64> {
        self.0.kappa_g(tau, tau2).map_err(err)
    }

    /// Integral over cell `s` × cell `s2` (1-based).
    fn kappa_gd(&self, ts: f64, s: usize, s2: usize) -> PyResult<f64> {
        self.0.kappa_gd(ts, s, s2).map_err(err)
    }

    fn kappa_gdp(&self, ts: f64, n_period: usize, s: usize, s2: usize) -> PyResult<f64> {
        self.0.kappa_gdp(ts, n_period, s, s2).map_err(err)
    }

    /// `(λ₁, λ₂, λ₃, λ₄)`.
    fn lambda_constants(&self, ts: f64, n_period: usize) -> PyResult<(f64, f64, f64, f64)> {
        let c = self.0.derived_constants(ts, n_period).map_err(err)?;
        Ok((c.lambda1, c.lambda2, c.lambda3, c.lambda4))
    }

    fn __repr__(&self) -> String {
        format!("DcKernel(alpha={}, beta={}, lambda_={})", self.0.alpha(), self.0.beta(), self.0.lambda())
    }
}

#[pyclass(name = "Signal", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySignal(ctkrm::SampledSignal);

#[pymethods]
impl PySignal {
    #[new]
    #[pyo3(signature = (samples, ts, intersample = "zoh", past = "unknown"))]
    fn new(samples: Vec<f64>, ts: f64, intersample: &str, past: &str) -> PyResult<Self> {
        let i = intersample.parse().map_err(err)?;
        let p = past.parse().map_err(err)?;
        ctkrm::SampledSignal::new(samples, ts, i, p).map(Self).map_err(err)
    }

    #[getter]
    fn samples(&self) -> Vec<f64> {
        self.0.samples().to_vec()
    }

    #[getter]
    fn ts(&self) -> f64 {
        self.0.ts()
    }

    #[getter]
    fn intersample(&self) -> String {
        self.0.intersample().to_string()
    }

    #[getter]
    fn past(&self) -> String {
        self.0.past().to_string()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("Signal(n={}, ts={}, {}/{})", self.0.len(), self.0.ts(), self.0.intersample(), self.0.past())
    }
}

#[pyclass(name = "HyperParams", from_py_object)]
#[derive(Clone, Copy)]
struct PyHyperParams {
    #[pyo3(get, set)]
    alpha: f64,
    #[pyo3(get, set)]
    beta: f64,
    #[pyo3(get, set, name = "lambda_")]
    lambda: f64,
    #[pyo3(get, set)]
    sigma2: f64,
    #[pyo3(get, set)]
    alpha_t: f64,
}

impl From<hyperopt::HyperParams> for PyHyperParams {
    fn from(h: hyperopt::HyperParams) -> Self {
        Self { alpha: h.alpha, beta: h.beta, lambda: h.lambda, sigma2: h.sigma2, alpha_t: h.alpha_t }
    }
}

impl From<PyHyperParams> for hyperopt::HyperParams {
    fn from(h: PyHyperParams) -> Self {
        Self { alpha: h.alpha, beta: h.beta, lambda: h.lambda, sigma2: h.sigma2, alpha_t: h.alpha_t }
    }
}

#[pymethods]
impl PyHyperParams {
    #[new]
    #[pyo3(signature = (alpha, beta, lambda_, sigma2, alpha_t = 0.0))]
    fn new(alpha: f64, beta: f64, lambda_: f64, sigma2: f64, alpha_t: f64) -> Self {
        Self { alpha, beta, lambda: lambda_, sigma2, alpha_t }
    }

    fn kernel(&self) -> PyResult<PyDcKernel> {
        hyperopt::HyperParams::from(*self).kernel().map(PyDcKernel).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "HyperParams(alpha={}, beta={}, lambda_={}, sigma2={}, alpha_t={})",
            self.alpha, self.beta, self.lambda, self.sigma2, self.alpha_t
        )
    }
}

/// Negative log marginal likelihood of `y` under the hyperparameters.
#[pyfunction]
fn neg_log_marginal(u: &PySignal, y: Vec<f64>, hp: PyHyperParams) -> PyResult<f64> {
    hyperopt::neg_log_marginal(&u.0, &y, &hp.into()).map_err(err)
}

/// Empirical Bayes multistart search; returns `(hyperparams, objective)`.
#[pyfunction]
#[pyo3(signature = (u, y, n_starts = 25, seed = 0, transient = true, max_evals_per_start = 250))]
fn optimize(
    py: Python<'_>,
    u: &PySignal,
    y: Vec<f64>,
    n_starts: usize,
    seed: u64,
    transient: bool,
    max_evals_per_start: usize,
) -> PyResult<(PyHyperParams, f64)> {
    let settings = OptimizerSettings { n_starts, seed, transient, max_evals_per_start, ..Default::default() };
    let u = u.0.clone();
    let r = py.detach(|| hyperopt::optimize(&u, &y, &settings)).map_err(err)?;
    Ok((r.best.into(), r.objective))
}

#[pyclass(name = "Estimate", frozen)]
struct PyEstimate(RegularizedEstimate<ctkrm::DcKernel>);

#[pymethods]
impl PyEstimate {
    /// Regularized fit with the transient term `α_t·κ_g`; `γ = σ²`.
    #[staticmethod]
    fn fit(u: &PySignal, y: Vec<f64>, hp: PyHyperParams) -> PyResult<Self> {
        let hp = hyperopt::HyperParams::from(hp);
        let pair = build_declared(&u.0, hp.kernel().map_err(err)?).map_err(err)?;
        fit_with_transient(pair, &hp.transient().map_err(err)?, &y, hp.sigma2)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.0.coeffs().to_vec()
    }

    fn impulse(&self, grid: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.eval_impulse(&grid).map_err(err)
    }

    /// Last `horizon` samples of the output driven by `u_val`.
    fn predict(&self, u_val: &PySignal, horizon: usize) -> PyResult<Vec<f64>> {
        self.0.predict_output(&u_val.0, horizon).map_err(err)
    }
}

/// One Monte Carlo trial of a preset bank (`"D1"`…`"D4"`).
#[pyfunction]
#[pyo3(signature = (bank = "D3", seed = 0, index = 0))]
fn make_trial<'py>(py: Python<'py>, bank: &str, seed: u64, index: usize) -> PyResult<Bound<'py, PyDict>> {
    let spec = DataBankSpec::preset(bank).map_err(err)?;
    let ss = spec.system.to_state_space().map_err(err)?;
    let t = core_make_trial(&spec, &ss, seed, index).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("train_u", PySignal(t.train_u.clone()))?;
    d.set_item("train_y", t.train_y.clone())?;
    d.set_item("train_y0", t.train_y0.clone())?;
    d.set_item("sigma2", t.sigma2)?;
    d.set_item("validation_u", PySignal(t.validation_u.clone()))?;
    d.set_item("validation_y0", t.validation_window().to_vec())?;
    d.set_item("horizon", t.horizon)?;
    Ok(d)
}

/// Impulse response of the Rao–Garnier benchmark system on `grid`.
#[pyfunction]
#[pyo3(signature = (grid, a3 = 6.0))]
fn rao_garnier_impulse(grid: Vec<f64>, a3: f64) -> PyResult<Vec<f64>> {
    let ss = CtTransferFunction::rao_garnier(a3).and_then(|tf| tf.to_state_space()).map_err(err)?;
    ss.impulse_response(&grid).map_err(err)
}

#[pyfunction]
fn fit_g(g_hat: Vec<f64>, g_true: Vec<f64>) -> PyResult<f64> {
    ctkrm::metrics::fit_g(&g_hat, &g_true).map_err(err)
}

#[pyfunction]
fn fit_y(y_hat: Vec<f64>, y0: Vec<f64>) -> PyResult<f64> {
    ctkrm::metrics::fit_y(&y_hat, &y0).map_err(err)
}

#[pymodule]
fn pyctkrm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDcKernel>()?;
    m.add_class::<PySignal>()?;
    m.add_class::<PyHyperParams>()?;
    m.add_class::<PyEstimate>()?;
    m.add_function(wrap_pyfunction!(neg_log_marginal, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(make_trial, m)?)?;
    m.add_function(wrap_pyfunction!(rao_garnier_impulse, m)?)?;
    m.add_function(wrap_pyfunction!(fit_g, m)?)?;
    m.add_function(wrap_pyfunction!(fit_y, m)?)?;
    Ok(())
}
