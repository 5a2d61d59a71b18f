//! Python bindings: models for the three tasks, the integrator on linear test
//! fields, and the command runner.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ctdl_core::classify::{classify_loss, ClassifierModel};
use ctdl_core::cli::{self, Command, Overrides};
use ctdl_core::cnf::{cnf_loss, cnf_logdensity, cnf_sample, CnfModel};
use ctdl_core::distributions::{self, GaussianMixture, LabeledDataset};
use ctdl_core::dynamics::{FieldSpec, ValueNetSpec};
use ctdl_core::mfg::{self, MfgConfig, MfgModel, MfgScenario, Variant};
use ctdl_core::odeint::{integrate, AugmentedState, LinearField, Scheme};
use ctdl_core::paramcore::{seeded_rng, ParamVector};

fn err(e: ctdl_core::Error) -> PyErr {
    match e {
        ctdl_core::Error::Diverged { .. } | ctdl_core::Error::Io { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn scheme(name: &str) -> PyResult<Scheme> {
    match name {
        "rk4" => Ok(Scheme::Rk4),
        "euler" => Ok(Scheme::Euler),
        _ => Err(PyValueError::new_err(format!("unknown scheme `{name}` (rk4 or euler)"))),
    }
}

fn set_data(p: &mut ParamVector, values: Vec<f64>) -> PyResult<()> {
    *p = p.with_data(values).map_err(err)?;
    Ok(())
}

/// Neural ODE binary classifier on zero-padded 2-D inputs.
#[pyclass(name = "Classifier", skip_from_py_object)]
#[derive(Clone)]
struct PyClassifier {
    inner: ClassifierModel,
}

#[pymethods]
impl PyClassifier {
    #[new]
    #[pyo3(signature = (pad=1, width=16, intervals=8, seed=0))]
    fn new(pad: usize, width: usize, intervals: usize, seed: u64) -> PyResult<Self> {
        let inner = ClassifierModel::init(2, pad, width, intervals, &mut seeded_rng(seed)).map_err(err)?;
        Ok(PyClassifier { inner })
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params.data().to_vec()
    }

    #[setter]
    fn set_params(&mut self, values: Vec<f64>) -> PyResult<()> {
        set_data(&mut self.inner.params, values)
    }

    #[pyo3(signature = (x, steps=32, scheme="rk4"))]
    fn probability(&self, x: Vec<f64>, steps: usize, scheme: &str) -> PyResult<f64> {
        self.inner.probability(&x, steps, self::scheme(scheme)?).map_err(err)
    }

    /// Terminal features `z(1)`.
    #[pyo3(signature = (x, steps=32, scheme="rk4"))]
    fn features(&self, x: Vec<f64>, steps: usize, scheme: &str) -> PyResult<Vec<f64>> {
        let t = self.inner.features(&x, steps, self::scheme(scheme)?).map_err(err)?;
        Ok(t.last_z().to_vec())
    }

    /// Mean cross-entropy and its gradient.
    #[pyo3(signature = (points, labels, steps=32, scheme="rk4"))]
    fn loss_and_grad(
        &self,
        points: Vec<Vec<f64>>,
        labels: Vec<u8>,
        steps: usize,
        scheme: &str,
    ) -> PyResult<(f64, Vec<f64>)> {
        let data = LabeledDataset::new(points, labels).map_err(err)?;
        let (l, g) = classify_loss(&self.inner, &data, steps, self::scheme(scheme)?).map_err(err)?;
        Ok((l, g.into_data()))
    }
}

/// Continuous normalizing flow with a standard Gaussian reference.
#[pyclass(name = "Cnf", skip_from_py_object)]
#[derive(Clone)]
struct PyCnf {
    inner: CnfModel,
}

#[pymethods]
impl PyCnf {
    #[new]
    #[pyo3(signature = (dim, width=16, intervals=8, alpha=0.1, seed=0))]
    fn new(dim: usize, width: usize, intervals: usize, alpha: f64, seed: u64) -> PyResult<Self> {
        let field = FieldSpec::new(dim, width, intervals).map_err(err)?;
        let inner = CnfModel::init(field, alpha, &mut seeded_rng(seed)).map_err(err)?;
        Ok(PyCnf { inner })
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params.data().to_vec()
    }

    #[setter]
    fn set_params(&mut self, values: Vec<f64>) -> PyResult<()> {
        set_data(&mut self.inner.params, values)
    }

    #[pyo3(signature = (y, steps=32, scheme="rk4"))]
    fn logdensity(&self, y: Vec<f64>, steps: usize, scheme: &str) -> PyResult<f64> {
        Ok(cnf_logdensity(&self.inner, &y, steps, self::scheme(scheme)?).map_err(err)?.0)
    }

    /// Negative log-likelihood plus transport penalty, with its gradient.
    #[pyo3(signature = (batch, steps=32, scheme="rk4"))]
    fn loss_and_grad(&self, batch: Vec<Vec<f64>>, steps: usize, scheme: &str) -> PyResult<(f64, Vec<f64>)> {
        let (l, g) = cnf_loss(&self.inner, &batch, steps, self::scheme(scheme)?).map_err(err)?;
        Ok((l, g.into_data()))
    }

    #[pyo3(signature = (count, seed=0, steps=32, scheme="rk4"))]
    fn sample(&self, count: usize, seed: u64, steps: usize, scheme: &str) -> PyResult<Vec<Vec<f64>>> {
        let trajs = cnf_sample(&self.inner, count, &mut seeded_rng(seed), steps, self::scheme(scheme)?).map_err(err)?;
        Ok(trajs.iter().map(|t| t.last_z().to_vec()).collect())
    }
}

/// Value network for a potential mean field game with its scenario.
#[pyclass(name = "MeanFieldGame", skip_from_py_object)]
#[derive(Clone)]
struct PyMfg {
    model: MfgModel,
    scenario: MfgScenario,
}

#[pymethods]
impl PyMfg {
    #[new]
    #[pyo3(signature = (variant, alpha=None, beta=None, width=16, seed=0))]
    fn new(variant: &str, alpha: Option<f64>, beta: Option<f64>, width: usize, seed: u64) -> PyResult<Self> {
        let v = match variant {
            "ot" => Variant::Ot,
            "crowd" => Variant::Crowd,
            _ => return Err(PyValueError::new_err(format!("unknown variant `{variant}` (ot or crowd)"))),
        };
        let mut cfg = MfgConfig::with_variant(v);
        cfg.alpha = alpha.unwrap_or(cfg.alpha);
        cfg.beta = beta.unwrap_or(cfg.beta);
        let scenario = cfg.scenario().map_err(err)?;
        let spec = ValueNetSpec::new(scenario.dim(), width).map_err(err)?;
        Ok(PyMfg {
            model: MfgModel::init(spec, &mut seeded_rng(seed)),
            scenario,
        })
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.model.params.data().to_vec()
    }

    #[setter]
    fn set_params(&mut self, values: Vec<f64>) -> PyResult<()> {
        set_data(&mut self.model.params, values)
    }

    /// Objective and gradient for agents started at `xs`.
    #[pyo3(signature = (xs, steps=16, scheme="rk4"))]
    fn objective(&self, xs: Vec<Vec<f64>>, steps: usize, scheme: &str) -> PyResult<(f64, Vec<f64>)> {
        let (v, g, _) =
            mfg::mfg_objective(&self.model, &self.scenario, &xs, steps, self::scheme(scheme)?).map_err(err)?;
        Ok((v, g.into_data()))
    }

    fn residual(&self, t: f64, x: Vec<f64>, log_rho: f64) -> PyResult<f64> {
        mfg::hjb_residual(&self.model.value, self.model.params.data(), &self.scenario, t, &x, log_rho).map_err(err)
    }

    /// Agent path `z(t_i)` from `x0`.
    #[pyo3(signature = (x0, steps=32, scheme="rk4"))]
    fn trajectory(&self, x0: Vec<f64>, steps: usize, scheme: &str) -> PyResult<Vec<Vec<f64>>> {
        let t = self.model.simulate(&self.scenario, &x0, steps, self::scheme(scheme)?).map_err(err)?;
        Ok((0..=t.steps()).map(|i| t.z(i).to_vec()).collect())
    }
}

/// Integrates `z' = A z` and returns `(z(1), log det)`.
#[pyfunction]
#[pyo3(signature = (a, x0, steps=64, scheme="rk4"))]
fn integrate_linear(a: Vec<Vec<f64>>, x0: Vec<f64>, steps: usize, scheme: &str) -> PyResult<(Vec<f64>, f64)> {
    let n = x0.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be n x n with n = len(x0)"));
    }
    let field = LinearField::new(n, a.concat()).map_err(err)?;
    let t = integrate(&field, &AugmentedState::new(x0), 0.0, 1.0, steps, self::scheme(scheme)?).map_err(err)?;
    let end = t.last();
    Ok((end.z, end.logdet))
}

#[pyfunction]
fn gauss_logpdf(x: Vec<f64>) -> f64 {
    distributions::gauss_logpdf(&x)
}

/// Equal-weight isotropic mixture log-density.
#[pyfunction]
fn mixture_logpdf(means: Vec<Vec<f64>>, std: f64, x: Vec<f64>) -> PyResult<f64> {
    Ok(GaussianMixture::equal(means, std).map_err(err)?.logpdf(&x))
}

/// Two concentric noisy circles: `(points, labels)`.
#[pyfunction]
#[pyo3(signature = (count, seed=0, inner=1.0, outer=2.0, noise=0.1))]
fn make_circles(count: usize, seed: u64, inner: f64, outer: f64, noise: f64) -> PyResult<(Vec<Vec<f64>>, Vec<u8>)> {
    let d = distributions::make_circles(count, inner, outer, noise, &mut seeded_rng(seed)).map_err(err)?;
    Ok((d.points, d.labels))
}

#[pyfunction]
fn straightness(paths: Vec<Vec<Vec<f64>>>) -> f64 {
    ctdl_core::cnf::straightness(&paths)
}

/// Runs a CLI command on a TOML configuration string and returns its summary.
#[pyfunction]
#[pyo3(signature = (command, config, out=None, overrides=Vec::new()))]
fn run(command: &str, config: &str, out: Option<PathBuf>, overrides: Vec<String>) -> PyResult<BTreeMap<String, f64>> {
    let cmd = match command {
        "train" => Command::Train,
        "eval" => Command::Eval,
        "sample" => Command::Sample,
        "export" => Command::Export,
        _ => return Err(PyValueError::new_err(format!("unknown command `{command}`"))),
    };
    let ov = Overrides {
        out,
        set: overrides,
        ..Default::default()
    };
    let cfg = cli::parse_config_text(config, &ov).map_err(err)?;
    cli::run(cmd, &cfg, None).map_err(err)
}

#[pymodule]
fn ctdl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyClassifier>()?;
    m.add_class::<PyCnf>()?;
    m.add_class::<PyMfg>()?;
    m.add_function(wrap_pyfunction!(integrate_linear, m)?)?;
    m.add_function(wrap_pyfunction!(gauss_logpdf, m)?)?;
    m.add_function(wrap_pyfunction!(mixture_logpdf, m)?)?;
    m.add_function(wrap_pyfunction!(make_circles, m)?)?;
    m.add_function(wrap_pyfunction!(straightness, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
