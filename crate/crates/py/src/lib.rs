//! Python bindings. Distributions cross the boundary as lists of floats;
//! `ProbDist` is available for validation and mixing.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use pmixed_core::accountant::{self, LedgerEntry};
use pmixed_core::decoder;
use pmixed_core::ensemble::{DocumentMode, Tokenization};
use pmixed_core::harness::{self, SessionOptions};
use pmixed_core::screening::{self, ScreeningConfig};
use pmixed_core::{divergence, projection, Error, RenyiOrder};

create_exception!(pmixed, PmixedError, PyValueError);

fn err(e: Error) -> PyErr {
    PmixedError::new_err(format!("{}: {e}", e.kind()))
}

fn order(alpha: f64) -> PyResult<RenyiOrder> {
    RenyiOrder::new(alpha).map_err(err)
}

fn dist(probs: Vec<f64>) -> PyResult<divergence::ProbDist> {
    divergence::ProbDist::new(probs).map_err(err)
}

fn dists(members: Vec<Vec<f64>>) -> PyResult<Vec<divergence::ProbDist>> {
    members.into_iter().map(dist).collect()
}

fn to_python(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "ProbDist", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyProbDist(divergence::ProbDist);

#[pymethods]
impl PyProbDist {
    #[new]
    fn new(probs: Vec<f64>) -> PyResult<Self> {
        dist(probs).map(Self)
    }

    #[staticmethod]
    fn uniform(size: usize) -> PyResult<Self> {
        divergence::ProbDist::uniform(size).map(Self).map_err(err)
    }

    #[staticmethod]
    fn point_mass(size: usize, index: usize) -> PyResult<Self> {
        divergence::ProbDist::point_mass(size, index).map(Self).map_err(err)
    }

    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.0.probs().to_vec()
    }

    fn prob(&self, index: usize) -> PyResult<f64> {
        self.0
            .probs()
            .get(index)
            .copied()
            .ok_or_else(|| PmixedError::new_err(format!("index {index} out of range")))
    }

    /// weight·self + (1 - weight)·other
    fn mix(&self, other: &PyProbDist, weight: f64) -> PyResult<Self> {
        self.0.mix(&other.0, weight).map(Self).map_err(err)
    }

    fn digest(&self) -> String {
        decoder::distribution_digest(&self.0)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("ProbDist({:?})", self.0.probs())
    }
}

#[pyfunction]
fn renyi_divergence(p: Vec<f64>, q: Vec<f64>, alpha: f64) -> PyResult<f64> {
    divergence::renyi_divergence(&dist(p)?, &dist(q)?, order(alpha)?).map_err(err)
}

#[pyfunction]
fn renyi_divergence_sym(p: Vec<f64>, q: Vec<f64>, alpha: f64) -> PyResult<f64> {
    divergence::renyi_divergence_sym(&dist(p)?, &dist(q)?, order(alpha)?).map_err(err)
}

#[pyclass(name = "ProjectionResult", frozen, get_all)]
struct PyProjectionResult {
    lambda_: f64,
    projected: Vec<f64>,
    achieved_divergence: f64,
}

#[pyfunction]
#[pyo3(signature = (p_private, p_public, alpha, beta, tol = projection::DEFAULT_TOLERANCE))]
fn project(p_private: Vec<f64>, p_public: Vec<f64>, alpha: f64, beta: f64, tol: f64) -> PyResult<PyProjectionResult> {
    let r = projection::project(&dist(p_private)?, &dist(p_public)?, order(alpha)?, beta, tol).map_err(err)?;
    Ok(PyProjectionResult {
        lambda_: r.lambda,
        projected: r.projected.into_vec(),
        achieved_divergence: r.achieved_divergence,
    })
}

#[pyfunction]
fn screening_eps(lambda_screen: f64, n: usize, sigma: f64, alpha: f64) -> PyResult<f64> {
    screening::screening_eps(lambda_screen, n, sigma, order(alpha)?).map_err(err)
}

#[pyclass(name = "ScreeningVerdict", frozen, get_all)]
struct PyScreeningVerdict {
    passed: bool,
    noisy_divergence: f64,
    eps_cost: f64,
    rng_seed_used: u64,
}

#[pyfunction]
#[pyo3(signature = (private_dists, p_public, lambda_screen, sigma, threshold, top_k, alpha, seed, symmetric = false, add_noise = true))]
#[allow(clippy::too_many_arguments)]
fn screen(
    private_dists: Vec<Vec<f64>>,
    p_public: Vec<f64>,
    lambda_screen: f64,
    sigma: f64,
    threshold: f64,
    top_k: usize,
    alpha: f64,
    seed: u64,
    symmetric: bool,
    add_noise: bool,
) -> PyResult<PyScreeningVerdict> {
    let cfg = ScreeningConfig {
        lambda_screen,
        sigma,
        threshold,
        top_k,
        alpha: order(alpha)?,
        symmetric,
        add_noise,
    };
    let v = screening::screen(&dists(private_dists)?, &dist(p_public)?, &cfg, seed).map_err(err)?;
    Ok(PyScreeningVerdict {
        passed: v.passed,
        noisy_divergence: v.noisy_divergence,
        eps_cost: v.eps_cost,
        rng_seed_used: v.rng_seed_used,
    })
}

#[pyfunction]
fn data_dependent_loss(projected: Vec<Vec<f64>>, p_public: Vec<f64>, alpha: f64) -> PyResult<f64> {
    accountant::data_dependent_loss(&dists(projected)?, &dist(p_public)?, order(alpha)?).map_err(err)
}

#[pyfunction]
fn data_independent_bound(alpha: f64, beta: f64, n: usize) -> PyResult<f64> {
    accountant::data_independent_bound(order(alpha)?, beta, n).map_err(err)
}

/// `eps` lists ε(k) for k = 2..=alpha.
#[pyfunction]
fn subsampled_loss(eps: Vec<f64>, q: f64, alpha: u32) -> PyResult<f64> {
    if alpha < 2 || eps.len() != alpha as usize - 1 {
        return Err(PmixedError::new_err(format!(
            "need {} values of eps for orders 2..={alpha}, got {}",
            alpha.saturating_sub(1),
            eps.len()
        )));
    }
    accountant::subsampled_loss(|k| eps[k as usize - 2], q, alpha).map_err(err)
}

#[pyfunction]
fn rdp_to_dp(eps_rdp: f64, alpha: f64, delta: f64) -> PyResult<f64> {
    accountant::rdp_to_dp(eps_rdp, order(alpha)?, delta).map_err(err)
}

#[pyfunction]
fn select_beta(eps_budget: f64, query_budget: u64, alpha: f64, n: usize) -> PyResult<f64> {
    accountant::select_beta(eps_budget, query_budget, order(alpha)?, n).map_err(err)
}

#[pyfunction]
fn utility_gap_bound(
    lambdas: Vec<Vec<f64>>,
    private_likelihoods: Vec<Vec<f64>>,
    public_likelihoods: Vec<f64>,
) -> PyResult<f64> {
    accountant::utility_gap_bound(&lambdas, &private_likelihoods, &public_likelihoods).map_err(err)
}

#[pyclass(name = "PrivacyLedger")]
struct PyPrivacyLedger(accountant::PrivacyLedger);

#[pymethods]
impl PyPrivacyLedger {
    #[new]
    #[pyo3(signature = (alpha, delta = harness::DEFAULT_DELTA))]
    fn new(alpha: f64, delta: f64) -> PyResult<Self> {
        accountant::PrivacyLedger::new(order(alpha)?, delta).map(Self).map_err(err)
    }

    #[pyo3(signature = (eps_screen, eps_decode, screened_out = false))]
    fn record(&mut self, eps_screen: f64, eps_decode: f64, screened_out: bool) -> PyResult<f64> {
        let query_index = self.0.entries().len() as u64;
        self.0
            .record_entry(LedgerEntry {
                query_index,
                eps_screen,
                eps_decode,
                screened_out,
            })
            .map_err(err)?;
        Ok(self.0.eps_rdp_total())
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha().value()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.0.delta()
    }

    #[getter]
    fn eps_rdp(&self) -> f64 {
        self.0.eps_rdp_total()
    }

    #[getter]
    fn eps_screen(&self) -> f64 {
        self.0.eps_screen_total()
    }

    #[getter]
    fn eps_decode(&self) -> f64 {
        self.0.eps_decode_total()
    }

    #[getter]
    fn eps_dp(&self) -> f64 {
        self.0.eps_dp_total()
    }

    fn __len__(&self) -> usize {
        self.0.entries().len()
    }
}

#[pyclass(name = "DecodingConfig", frozen)]
struct PyDecodingConfig(decoder::DecodingConfig);

#[pymethods]
impl PyDecodingConfig {
    /// Parses the flat TOML config format used by the CLI.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        harness::parse_config(text).map(Self).map_err(err)
    }

    fn to_toml(&self) -> String {
        harness::render_config(&self.0)
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_python(py, &self.0)
    }
}

#[pyclass(name = "QueryOutcome", frozen, get_all)]
struct PyQueryOutcome {
    query_index: u64,
    token: usize,
    screened_out: bool,
    eps_screen: f64,
    eps_decode: f64,
    lambdas: Vec<f64>,
    noisy_divergence: Option<f64>,
    beta_used: f64,
    output_dist: Vec<f64>,
    output_dist_digest: String,
}

impl From<decoder::QueryOutcome> for PyQueryOutcome {
    fn from(o: decoder::QueryOutcome) -> Self {
        Self {
            query_index: o.query_index,
            token: o.token,
            screened_out: o.screened_out,
            eps_screen: o.eps_screen,
            eps_decode: o.eps_decode,
            lambdas: o.lambdas,
            noisy_divergence: o.noisy_divergence,
            beta_used: o.beta_used,
            output_dist: o.output_dist.into_vec(),
            output_dist_digest: o.output_dist_digest,
        }
    }
}

/// One query; the cost is recorded in `ledger`.
#[pyfunction]
fn decode_query(
    private_dists: Vec<Vec<f64>>,
    p_public: Vec<f64>,
    config: &PyDecodingConfig,
    ledger: &mut PyPrivacyLedger,
    query_index: u64,
) -> PyResult<PyQueryOutcome> {
    let private = dists(private_dists)?;
    let public = dist(p_public)?;
    let cfg = &config.0;
    let outcome = match cfg.mode {
        decoder::DecodingMode::Adaptive => {
            decoder::decode_adaptive(&private, &public, cfg, &mut ledger.0, query_index)
        }
        decoder::DecodingMode::Baseline => decoder::decode_baseline(
            |i| Ok(private[i].clone()),
            &public,
            cfg,
            &mut ledger.0,
            query_index,
        ),
    }
    .map_err(err)?;
    Ok(outcome.into())
}

#[pyfunction]
#[pyo3(signature = (corpus, n, out_dir, order = 2, smoothing = 0.1, seed = 0, public_fraction = 0.04, eval_fraction = 0.1, tokenization = "char", doc_mode = "lines"))]
#[allow(clippy::too_many_arguments)]
fn train_shards(
    py: Python<'_>,
    corpus: PathBuf,
    n: usize,
    out_dir: PathBuf,
    order: usize,
    smoothing: f64,
    seed: u64,
    public_fraction: f64,
    eval_fraction: f64,
    tokenization: &str,
    doc_mode: &str,
) -> PyResult<Py<PyAny>> {
    let args = harness::TrainShardsArgs {
        corpus,
        n,
        order,
        smoothing,
        seed,
        out_dir,
        public_fraction,
        eval_fraction,
        tokenization: tokenization.parse::<Tokenization>().map_err(err)?,
        doc_mode: doc_mode.parse::<DocumentMode>().map_err(err)?,
    };
    let manifest = py.detach(|| harness::cmd_train_shards(&args)).map_err(err)?;
    to_python(py, &manifest)
}

#[pyfunction]
#[pyo3(signature = (models_dir, config_path, ledger_out, report_out, eval_path = None, max_queries = None))]
fn decode(
    py: Python<'_>,
    models_dir: PathBuf,
    config_path: PathBuf,
    ledger_out: PathBuf,
    report_out: PathBuf,
    eval_path: Option<PathBuf>,
    max_queries: Option<u64>,
) -> PyResult<Py<PyAny>> {
    let args = harness::DecodeArgs {
        models_dir,
        eval_path,
        doc_mode: None,
        config_path,
        ledger_out,
        report_out,
        options: SessionOptions {
            max_queries,
            ..Default::default()
        },
    };
    let report = py.detach(|| harness::cmd_decode(&args)).map_err(err)?;
    to_python(py, &report)
}

#[pyfunction]
#[pyo3(signature = (models_dir, eval_path = None))]
fn evaluate(py: Python<'_>, models_dir: PathBuf, eval_path: Option<PathBuf>) -> PyResult<Py<PyAny>> {
    let report = py
        .detach(|| harness::cmd_evaluate(&models_dir, eval_path.as_deref(), None))
        .map_err(err)?;
    to_python(py, &report)
}

#[pyfunction]
#[pyo3(signature = (ledger_path, alpha = None, delta = None))]
fn account(py: Python<'_>, ledger_path: PathBuf, alpha: Option<f64>, delta: Option<f64>) -> PyResult<Py<PyAny>> {
    let summary = harness::cmd_account(&ledger_path, alpha, delta).map_err(err)?;
    to_python(py, &summary)
}

#[pymodule]
fn pmixed(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PmixedError", m.py().get_type::<PmixedError>())?;
    m.add_class::<PyProbDist>()?;
    m.add_class::<PyProjectionResult>()?;
    m.add_class::<PyScreeningVerdict>()?;
    m.add_class::<PyPrivacyLedger>()?;
    m.add_class::<PyDecodingConfig>()?;
    m.add_class::<PyQueryOutcome>()?;
    for f in [
        wrap_pyfunction!(renyi_divergence, m)?,
        wrap_pyfunction!(renyi_divergence_sym, m)?,
        wrap_pyfunction!(project, m)?,
        wrap_pyfunction!(screening_eps, m)?,
        wrap_pyfunction!(screen, m)?,
        wrap_pyfunction!(data_dependent_loss, m)?,
        wrap_pyfunction!(data_independent_bound, m)?,
        wrap_pyfunction!(subsampled_loss, m)?,
        wrap_pyfunction!(rdp_to_dp, m)?,
        wrap_pyfunction!(select_beta, m)?,
        wrap_pyfunction!(utility_gap_bound, m)?,
        wrap_pyfunction!(decode_query, m)?,
        wrap_pyfunction!(train_shards, m)?,
        wrap_pyfunction!(decode, m)?,
        wrap_pyfunction!(evaluate, m)?,
        wrap_pyfunction!(account, m)?,
    ] {
        m.add_function(f)?;
    }
    Ok(())
}
