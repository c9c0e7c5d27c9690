//! Python bindings. Structured results cross the boundary as JSON strings
//! or plain lists so the extension needs no extra Python dependencies.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use perspecta::bayesopt::{self, SearchSpace};
use perspecta::correct::ForensicReport;
use perspecta::gmm::{self, GaussianComponent, GmmParams};
use perspecta::iforest;
use perspecta::ingest::{self, AccessLogRecord};
use perspecta::pipeline::{self, PipelineConfig};
use perspecta::synth::{self, SynthConfig};

fn err(e: perspecta::Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Parse one extended-format log line into a record (JSON).
#[pyfunction]
fn parse_line(line: &str) -> PyResult<String> {
    let r = ingest::parse_line(line, 1, &ingest::LogSchema::extended()).map_err(value_err)?;
    Ok(serde_json::to_string(&r).expect("record serializes"))
}

/// Render a record (JSON) back into an extended-format log line.
#[pyfunction]
fn format_line(record_json: &str) -> PyResult<String> {
    let r: AccessLogRecord = serde_json::from_str(record_json).map_err(value_err)?;
    Ok(ingest::format_line(&r))
}

/// Write a synthetic workload into `out`; returns the number of records.
#[pyfunction]
#[pyo3(signature = (out, seed = 7, benign = false, config = None))]
fn synthesize(py: Python<'_>, out: PathBuf, seed: u64, benign: bool, config: Option<PathBuf>) -> PyResult<usize> {
    py.detach(|| {
        let mut cfg = match config {
            Some(p) => SynthConfig::load(&p)?,
            None => SynthConfig::default(),
        };
        cfg = cfg.with_seed(seed);
        if benign {
            cfg = cfg.benign();
        }
        let s = synth::generate(&cfg)?;
        s.write(&out)?;
        Ok(s.records.len())
    })
    .map_err(err)
}

#[pyfunction]
fn gaussian_log_density(x: Vec<f64>, mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> PyResult<f64> {
    gmm::gaussian_log_density(&x, &GaussianComponent { mean, covariance }).map_err(value_err)
}

/// A fitted Gaussian mixture.
#[pyclass(module = "perspecta")]
struct Gmm {
    params: GmmParams,
}

#[pymethods]
impl Gmm {
    #[new]
    #[pyo3(signature = (data, k, seed))]
    fn fit(py: Python<'_>, data: Vec<Vec<f64>>, k: usize, seed: u64) -> PyResult<Self> {
        let params = py.detach(|| gmm::fit_em_default(&data, k, seed)).map_err(value_err)?;
        Ok(Gmm { params })
    }

    #[getter]
    fn k(&self) -> usize {
        self.params.k
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.params.weights.clone()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        self.params.components.iter().map(|c| c.mean.clone()).collect()
    }

    #[getter]
    fn log_likelihoods(&self) -> Vec<f64> {
        self.params.train_log_likelihoods.clone()
    }

    fn bic(&self, n: usize) -> f64 {
        bayesopt::bic(&self.params, n)
    }

    /// Most probable component per row.
    fn assign(&self, data: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let a = gmm::assign(&data, &self.params).map_err(value_err)?;
        Ok(a.clusters)
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.params).expect("params serialize")
    }
}

/// An isolation forest over a numeric matrix.
#[pyclass(module = "perspecta")]
struct IsolationForest {
    forest: iforest::IsolationForest,
}

#[pymethods]
impl IsolationForest {
    #[new]
    #[pyo3(signature = (data, seed, n_trees = 100, subsample = 256))]
    fn fit(py: Python<'_>, data: Vec<Vec<f64>>, seed: u64, n_trees: usize, subsample: usize) -> PyResult<Self> {
        let forest = py
            .detach(|| iforest::fit_forest(&data, n_trees, subsample, seed))
            .map_err(value_err)?;
        Ok(IsolationForest { forest })
    }

    fn scores(&self, data: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        iforest::score_all(&self.forest, &data).map_err(value_err)
    }
}

/// Minimize `objective` over `[lo, hi]`; returns `(best, [(param, value), ...])`.
#[pyfunction]
#[pyo3(signature = (objective, lo, hi, budget, seed, integer = false))]
fn minimize(
    objective: Bound<'_, PyAny>,
    lo: f64,
    hi: f64,
    budget: usize,
    seed: u64,
    integer: bool,
) -> PyResult<(Option<f64>, Vec<(f64, f64)>)> {
    let space = if integer {
        SearchSpace::integer(lo as i64, hi as i64)
    } else {
        SearchSpace::real(lo, hi)
    };
    let mut failure = None;
    let trace = bayesopt::optimize(
        |x| match objective.call1((x,)).and_then(|v| v.extract::<f64>()) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        space,
        budget,
        seed,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let evals = trace.evaluations.iter().map(|e| (e.param, e.value)).collect();
    Ok((trace.best_param(), evals))
}

/// The forensic report of one run.
#[pyclass(module = "perspecta")]
struct Report {
    report: ForensicReport,
}

#[pymethods]
impl Report {
    fn to_json(&self) -> String {
        self.report.to_json()
    }

    fn summary(&self) -> String {
        self.report.render_text()
    }

    fn confirmed_csv(&self) -> String {
        self.report.confirmed_csv()
    }

    /// `(attack, perspective, entity)` for every confirmed candidate.
    fn confirmed(&self) -> Vec<(String, String, String)> {
        self.report
            .confirmed()
            .map(|c| (c.attack.to_string(), c.perspective.to_string(), c.entity.clone()))
            .collect()
    }

    /// Score against a `truth.json` written by `synthesize`; returns JSON.
    fn score(&self, truth_path: PathBuf) -> PyResult<String> {
        let truth: synth::GroundTruth = pipeline::read_json(&truth_path, "ground truth").map_err(err)?;
        let s = synth::score_against_truth(&self.report, &truth);
        Ok(serde_json::to_string(&s).expect("score serializes"))
    }
}

/// Run the whole pipeline over log files.
#[pyfunction]
#[pyo3(signature = (inputs, seed, offerings = None, rules = None, config = None))]
fn run(
    py: Python<'_>,
    inputs: Vec<PathBuf>,
    seed: u64,
    offerings: Option<PathBuf>,
    rules: Option<PathBuf>,
    config: Option<PathBuf>,
) -> PyResult<Report> {
    py.detach(|| {
        let mut cfg = match config {
            Some(p) => PipelineConfig::load(&p)?,
            None => PipelineConfig::default(),
        };
        cfg.inputs = inputs;
        cfg.seed = Some(seed);
        if offerings.is_some() {
            cfg.offerings = offerings;
        }
        if rules.is_some() {
            cfg.rules = rules;
        }
        pipeline::run(&cfg).map(|o| Report { report: o.report })
    })
    .map_err(err)
}

#[pymodule]
#[pyo3(name = "perspecta")]
fn perspecta_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse_line, m)?)?;
    m.add_function(wrap_pyfunction!(format_line, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_log_density, m)?)?;
    m.add_function(wrap_pyfunction!(minimize, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<Gmm>()?;
    m.add_class::<IsolationForest>()?;
    m.add_class::<Report>()?;
    Ok(())
}
