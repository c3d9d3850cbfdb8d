//! Python bindings: synthetic data, masks, metrics, spectra and the
//! end-to-end pipeline. Matrices cross the boundary as nested lists.

use imvc::data::{
    generate_mask as gen_mask, normalize_minmax, synthetic as gen_synthetic, SynthParams,
};
use imvc::diagnostics::spectrum;
use imvc::metrics;
use imvc::model::ModelConfig;
use imvc::train::{run_pipeline, PipelineOptions};
use ndarray::Array2;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: imvc::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type Rows = Vec<Vec<f64>>;

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((n, d), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Synthetic multi-view clusters: returns `(views, labels)`.
#[pyfunction]
#[pyo3(signature = (n=300, k=3, v=2, sep=5.0, seed=0))]
fn synthetic(
    n: usize,
    k: usize,
    v: usize,
    sep: f64,
    seed: u64,
) -> PyResult<(Vec<Rows>, Vec<usize>)> {
    let ds = gen_synthetic(SynthParams { n, k, v, sep, seed }).map_err(err)?;
    let views = ds.views().iter().map(to_rows).collect();
    Ok((views, ds.labels().unwrap_or_default().to_vec()))
}

/// Observation mask with `round(n(1-eta))` complete rows, as `n x v` bools.
#[pyfunction]
fn generate_mask(n: usize, v: usize, eta: f64, seed: u64) -> PyResult<Vec<Vec<bool>>> {
    let m = gen_mask(n, v, eta, seed).map_err(err)?;
    Ok(m.matrix().rows().into_iter().map(|r| r.to_vec()).collect())
}

/// `(acc, nmi, ari)` of `pred` against `truth`.
#[pyfunction]
fn scores(truth: Vec<usize>, pred: Vec<usize>) -> PyResult<(f64, f64, f64)> {
    let s = metrics::score(&truth, &pred).map_err(err)?;
    Ok((s.acc, s.nmi, s.ari))
}

/// Maximum-weight assignment; `None` marks rows left unmatched.
#[pyfunction]
fn assignment_map(weights: Vec<Vec<i64>>) -> PyResult<Vec<Option<usize>>> {
    let n = weights.len();
    let d = weights.first().map_or(0, Vec::len);
    if weights.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let w = Array2::from_shape_vec((n, d), weights.concat())
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(metrics::assignment_map(&w)
        .into_iter()
        .map(|j| (j != usize::MAX).then_some(j))
        .collect())
}

#[pyfunction]
fn effective_rank(matrix: Vec<Vec<f64>>) -> PyResult<f64> {
    let m = from_rows(&matrix)?;
    Ok(spectrum(m.view()).map_err(err)?.effective_rank)
}

/// Default model configuration as JSON.
#[pyfunction]
fn default_config() -> PyResult<String> {
    serde_json::to_string(&ModelConfig::default()).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Generates synthetic data, masks it at `eta`, trains and clusters.
/// `config` is a ModelConfig JSON document; the synthetic preset is used
/// when it is omitted.
#[pyfunction]
#[pyo3(signature = (eta=0.5, seed=0, n=300, k=3, v=2, sep=5.0, data_seed=0, config=None))]
#[allow(clippy::too_many_arguments)]
fn run_synthetic<'py>(
    py: Python<'py>,
    eta: f64,
    seed: u64,
    n: usize,
    k: usize,
    v: usize,
    sep: f64,
    data_seed: u64,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = match config {
        Some(json) => {
            serde_json::from_str(json).map_err(|e| PyValueError::new_err(e.to_string()))?
        }
        None => ModelConfig::synthetic(),
    };
    let cfg = ModelConfig { seed, ..cfg };
    cfg.validate().map_err(err)?;
    let ds = normalize_minmax(
        &gen_synthetic(SynthParams {
            n,
            k,
            v,
            sep,
            seed: data_seed,
        })
        .map_err(err)?,
    );
    let mask = gen_mask(n, v, eta, seed).map_err(err)?;
    let out = run_pipeline(&ds, &mask, &cfg, &PipelineOptions::default()).map_err(err)?;
    let r = &out.report;
    let d = PyDict::new(py);
    if let Some(s) = r.scores {
        d.set_item("acc", s.acc)?;
        d.set_item("nmi", s.nmi)?;
        d.set_item("ari", s.ari)?;
    }
    d.set_item("labels", r.labels.clone())?;
    d.set_item("effective_rank_sub", r.spectrum_sub.effective_rank)?;
    d.set_item("effective_rank_full", r.spectrum_full.effective_rank)?;
    d.set_item("best_epoch", r.best_epoch)?;
    d.set_item("recovered_entries", r.recovered_entries)?;
    Ok(d)
}

#[pymodule]
fn imvc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(generate_mask, m)?)?;
    m.add_function(wrap_pyfunction!(scores, m)?)?;
    m.add_function(wrap_pyfunction!(assignment_map, m)?)?;
    m.add_function(wrap_pyfunction!(effective_rank, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_synthetic, m)?)?;
    Ok(())
}
