//! Python module `latent_ransac`: synthetic instances, estimation and the
//! stopping rules. Results come back as plain dicts and lists.

use latent_ransac::calibrate::calibrate_tolerance as calibrate;
use latent_ransac::geometry::{Point2, Point3};
use latent_ransac::stopping::{required_iterations_latent, required_iterations_vanilla};
use latent_ransac::{
    estimate as run_estimate, synth as run_synth, DetectionModel, EmbeddingConfig, EstimatorConfig, InstanceSpec,
    Match2D, Match3D, MatchSet, Mode, ProblemKind,
};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any()
            } else if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let converted = items.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, converted)?.into_any()
        }
        Value::Object(map) => {
            let d = PyDict::new(py);
            for (k, x) in map {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn problem_kind(problem: &str) -> PyResult<ProblemKind> {
    problem.parse().map_err(|_| value_error(format!("unknown problem '{problem}'")))
}

fn match_set(kind: ProblemKind, rows: Vec<Vec<f64>>) -> PyResult<MatchSet> {
    let width = match kind {
        ProblemKind::Homography => 4,
        ProblemKind::Rigid3d => 6,
    };
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(value_error(format!("row {i}: expected {width} values for {kind}, found {}", r.len())));
    }
    Ok(match kind {
        ProblemKind::Homography => MatchSet::Homography(
            rows.iter()
                .map(|r| Match2D::new(Point2::new(r[0], r[1]), Point2::new(r[2], r[3])))
                .collect(),
        ),
        ProblemKind::Rigid3d => MatchSet::Rigid3d(
            rows.iter()
                .map(|r| Match3D::new(Point3::new(r[0], r[1], r[2]), Point3::new(r[3], r[4], r[5])))
                .collect(),
        ),
    })
}

fn match_rows(set: &MatchSet) -> Vec<Vec<f64>> {
    match set {
        MatchSet::Homography(ms) => ms.iter().map(|m| vec![m.p.x, m.p.y, m.q.x, m.q.y]).collect(),
        MatchSet::Rigid3d(ms) => ms.iter().map(|m| vec![m.p.x, m.p.y, m.p.z, m.q.x, m.q.y, m.q.z]).collect(),
    }
}

fn instance_spec(problem: &str, n: usize, omega: f64, sigma: f64, seed: u64) -> PyResult<InstanceSpec> {
    let spec = match problem_kind(problem)? {
        ProblemKind::Homography => InstanceSpec::homography(n, omega, sigma, seed),
        ProblemKind::Rigid3d => InstanceSpec::rigid(n, omega, sigma, seed),
    };
    spec.validate().map_err(value_error)?;
    Ok(spec)
}

/// Planted synthetic instance: dict with `matches`, `inlier_mask` and `model`.
#[pyfunction]
#[pyo3(signature = (problem = "homography", n = 1000, omega = 0.1, sigma = 1.0, seed = 0))]
fn synth<'py>(py: Python<'py>, problem: &str, n: usize, omega: f64, sigma: f64, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let inst = run_synth(&instance_spec(problem, n, omega, sigma, seed)?).map_err(value_error)?;
    let d = PyDict::new(py);
    d.set_item("problem", inst.matches.kind().as_str())?;
    d.set_item("matches", match_rows(&inst.matches))?;
    d.set_item("inlier_mask", inst.truth.inlier_mask.clone())?;
    d.set_item("model", to_py(py, &serde_json::to_value(inst.truth.model).map_err(value_error)?)?)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (
    matches, problem = "homography", mode = "latent", t = 70.0, threshold = 3.0, p0 = 0.99, seed = 0,
    max_iterations = 5_000_000, tables = 4, table_bits = None, c_factor = 1.8, rho = None, canvas = None,
    min_inliers = 0, detection = "ideal"
))]
#[allow(clippy::too_many_arguments)]
fn estimate<'py>(
    py: Python<'py>,
    matches: Vec<Vec<f64>>,
    problem: &str,
    mode: &str,
    t: f64,
    threshold: f64,
    p0: f64,
    seed: u64,
    max_iterations: u64,
    tables: usize,
    table_bits: Option<u32>,
    c_factor: f64,
    rho: Option<f64>,
    canvas: Option<(f64, f64)>,
    min_inliers: usize,
    detection: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let set = match_set(problem_kind(problem)?, matches)?;
    let mut embedding = EmbeddingConfig::default();
    if let Some((w, h)) = canvas {
        embedding.canvas_width = w;
        embedding.canvas_height = h;
    }
    if let Some(rho) = rho {
        embedding.rho = rho;
    }
    let cfg = EstimatorConfig {
        mode: mode.parse::<Mode>().map_err(value_error)?,
        p0,
        max_iterations,
        threshold,
        tolerance: t,
        c_factor,
        tables,
        table_bits,
        embedding,
        seed,
        min_inliers_to_accept: min_inliers,
        detection: detection.parse::<DetectionModel>().map_err(value_error)?,
        ..EstimatorConfig::default()
    };
    let result = py.detach(|| run_estimate(&set, &cfg)).map_err(value_error)?;
    let summary = to_py(py, &serde_json::to_value(&result).map_err(value_error)?)?;
    let d = summary.cast_into::<PyDict>()?;
    d.set_item("inlier_mask", result.inlier_mask)?;
    Ok(d)
}

/// Quantile of pairwise latent distances between pure-inlier hypotheses.
#[pyfunction]
#[pyo3(signature = (problem = "homography", n = 1000, omega = 0.1, sigma = 1.0, seed = 0, quantile = 0.95, hypotheses = 1000, rho = None))]
#[allow(clippy::too_many_arguments)]
fn calibrate_tolerance(
    py: Python<'_>,
    problem: &str,
    n: usize,
    omega: f64,
    sigma: f64,
    seed: u64,
    quantile: f64,
    hypotheses: usize,
    rho: Option<f64>,
) -> PyResult<f64> {
    let spec = instance_spec(problem, n, omega, sigma, seed)?;
    let mut embedding = EmbeddingConfig::default();
    if let Some(rho) = rho {
        embedding.rho = rho;
    }
    py.detach(|| calibrate(&spec, &embedding, quantile, hypotheses)).map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (p0, omega, gamma, mode = "vanilla", detection = 1.0))]
fn required_iterations(p0: f64, omega: f64, gamma: u32, mode: &str, detection: f64) -> PyResult<u64> {
    match mode.parse::<Mode>().map_err(value_error)? {
        Mode::Vanilla => required_iterations_vanilla(p0, omega, gamma),
        Mode::Latent => required_iterations_latent(p0, omega, gamma, detection),
    }
    .map_err(value_error)
}

#[pymodule]
#[pyo3(name = "latent_ransac")]
fn latent_ransac_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_tolerance, m)?)?;
    m.add_function(wrap_pyfunction!(required_iterations, m)?)?;
    Ok(())
}
