//! Python module `dpmm_ad`: fitting, scoring, metrics and file formats on
//! plain lists.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dpmm_anomaly::dataio::{self, Checkpoint, Shard, ShardRecord};
use dpmm_anomaly::score::normalize_rows;
use dpmm_anomaly::{
    DpmmModel, EmbeddingBatch, Error, FitConfig, LabeledScores, PairedImageScores, PatchGrid, ScoreMethod,
    SufficientStats,
};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    Ok(EmbeddingBatch::from_rows(rows).map_err(to_py)?.into_data())
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn method(name: &str) -> PyResult<ScoreMethod> {
    name.parse().map_err(|e: Error| to_py(e))
}

/// A fitted mixture, optionally with the statistics needed to resume.
#[pyclass(name = "Model", module = "dpmm_ad", frozen)]
struct PyModel {
    model: DpmmModel,
    stats: Option<SufficientStats>,
}

impl PyModel {
    /// Rows prepared the way the model expects them.
    fn batch(&self, data: &[Vec<f64>]) -> PyResult<EmbeddingBatch> {
        let batch = EmbeddingBatch::new(matrix(data)?);
        Ok(if self.model.normalized_input() {
            normalize_rows(&batch).0
        } else {
            batch
        })
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = dataio::read_checkpoint(&path).map_err(to_py)?;
        Ok(Self {
            model: ckpt.model,
            stats: ckpt.stats,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let ckpt = Checkpoint {
            model: self.model.clone(),
            stats: self.stats.clone(),
        };
        dataio::write_checkpoint(&path, &ckpt).map_err(to_py)
    }

    #[getter]
    fn num_components(&self) -> usize {
        self.model.num_components()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.model.dim()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.model.alpha()
    }

    #[getter]
    fn normalized_input(&self) -> bool {
        self.model.normalized_input()
    }

    #[getter]
    fn means(&self) -> Vec<Vec<f64>> {
        rows(self.model.means())
    }

    #[getter]
    fn vars(&self) -> Vec<Vec<f64>> {
        rows(self.model.vars())
    }

    #[getter]
    fn sticks(&self) -> Vec<f64> {
        self.model.sticks().to_vec()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.model.weights().to_vec()
    }

    #[getter]
    fn has_stats(&self) -> bool {
        self.stats.is_some()
    }

    #[pyo3(signature = (t_pi = 1e-6))]
    fn effective_components(&self, t_pi: f64) -> PyResult<Vec<usize>> {
        dpmm_anomaly::effective_components(&self.model, t_pi).map_err(to_py)
    }

    /// Per-row anomaly scores; higher is more anomalous.
    #[pyo3(signature = (data, method = "cosine", t_pi = 1e-6))]
    fn scores(&self, py: Python<'_>, data: Vec<Vec<f64>>, method: &str, t_pi: f64) -> PyResult<Vec<f64>> {
        let (batch, m) = (self.batch(&data)?, self::method(method)?);
        py.detach(|| dpmm_anomaly::anomaly_scores(&batch, &self.model, m, t_pi))
            .map_err(to_py)
    }

    #[pyo3(signature = (data, method = "cosine", t_pi = 1e-6))]
    fn assign(&self, py: Python<'_>, data: Vec<Vec<f64>>, method: &str, t_pi: f64) -> PyResult<Vec<usize>> {
        let (batch, m) = (self.batch(&data)?, self::method(method)?);
        py.detach(|| dpmm_anomaly::component_assignment(&batch, &self.model, m, t_pi))
            .map_err(to_py)
    }

    fn log_likelihood(&self, data: Vec<Vec<f64>>) -> PyResult<f64> {
        dpmm_anomaly::mixture_log_likelihood(&self.batch(&data)?, &self.model).map_err(to_py)
    }

    fn responsibilities(&self, data: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(
            &dpmm_anomaly::responsibilities(&self.batch(&data)?, &self.model).map_err(to_py)?,
        ))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(K={}, D={}, alpha={:.4}, normalized_input={})",
            self.model.num_components(),
            self.model.dim(),
            self.model.alpha(),
            self.model.normalized_input()
        )
    }
}

/// Fits a DPMM to a list of records (each a list of rows). Returns the
/// model and a dict with the per-epoch trace.
#[pyfunction]
#[pyo3(signature = (
    train, val = None, *, k = 500, gamma = 0.2, epochs = 40, batch_vectors = 12288,
    seed = 0, normalize = true, full_batch = false, t_pi = 1e-6
))]
#[allow(clippy::too_many_arguments)]
fn fit<'py>(
    py: Python<'py>,
    train: Vec<Vec<Vec<f64>>>,
    val: Option<Vec<Vec<Vec<f64>>>>,
    k: usize,
    gamma: f64,
    epochs: usize,
    batch_vectors: usize,
    seed: u64,
    normalize: bool,
    full_batch: bool,
    t_pi: f64,
) -> PyResult<(PyModel, Bound<'py, PyDict>)> {
    let load = |records: &[Vec<Vec<f64>>]| -> PyResult<Vec<EmbeddingBatch>> {
        records
            .iter()
            .map(|r| {
                let b = EmbeddingBatch::new(matrix(r)?);
                Ok(if normalize { normalize_rows(&b).0 } else { b })
            })
            .collect()
    };
    let train = load(&train)?;
    let val = load(val.as_deref().unwrap_or(&[]))?;
    let config = FitConfig {
        k,
        gamma,
        epochs,
        batch_vectors,
        seed,
        full_batch_mode: full_batch,
        t_pi,
        ..FitConfig::default()
    };
    let fitted = py.detach(|| dpmm_anomaly::fit(&train, &val, &config)).map_err(to_py)?;
    let report = PyDict::new(py);
    report.set_item("val_log_likelihood", &fitted.report.val_log_likelihood)?;
    report.set_item("effective_per_epoch", &fitted.report.effective_per_epoch)?;
    report.set_item("epoch_seconds", &fitted.report.epoch_seconds)?;
    report.set_item("best_epoch", fitted.report.best_epoch)?;
    report.set_item("effective_components", fitted.report.effective_components)?;
    Ok((
        PyModel {
            model: fitted.model,
            stats: Some(fitted.stats),
        },
        report,
    ))
}

#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    dpmm_anomaly::auroc(&LabeledScores::new(&scores, &labels).map_err(to_py)?).map_err(to_py)
}

#[pyfunction]
fn aupr(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    dpmm_anomaly::aupr(&LabeledScores::new(&scores, &labels).map_err(to_py)?).map_err(to_py)
}

fn bool_matrix(m: &[Vec<bool>]) -> PyResult<Array2<bool>> {
    let w = m.first().map_or(0, Vec::len);
    if m.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("ragged mask"));
    }
    Ok(Array2::from_shape_vec((m.len(), w), m.concat()).expect("rectangular"))
}

#[pyfunction]
fn dice(pred: Vec<Vec<bool>>, truth: Vec<Vec<bool>>) -> PyResult<f64> {
    dpmm_anomaly::dice(bool_matrix(&pred)?.view(), bool_matrix(&truth)?.view()).map_err(to_py)
}

#[pyfunction]
fn select_threshold(normal_scores: Vec<f64>, target_fpr: f64) -> PyResult<f64> {
    dpmm_anomaly::select_threshold(&normal_scores, target_fpr).map_err(to_py)
}

/// Bilinear upsampling of a patch-score grid to `height × width`.
#[pyfunction]
fn patch_to_pixel(grid: Vec<Vec<f64>>, height: usize, width: usize) -> PyResult<Vec<Vec<f64>>> {
    let grid = PatchGrid::new(matrix(&grid)?).map_err(to_py)?;
    Ok(rows(
        &dpmm_anomaly::patch_to_pixel(&grid, height, width)
            .map_err(to_py)?
            .scores,
    ))
}

/// Returns `(observed mean difference, two-sided p-value)`.
#[pyfunction]
#[pyo3(signature = (a, b, n_perm = 10000, seed = 0))]
fn paired_permutation_test(a: Vec<f64>, b: Vec<f64>, n_perm: usize, seed: u64) -> PyResult<(f64, f64)> {
    let r = dpmm_anomaly::paired_permutation_test(&PairedImageScores {
        method_a: a,
        method_b: b,
        n_perm,
        seed,
    })
    .map_err(to_py)?;
    Ok((r.observed, r.p_value))
}

#[pyfunction]
fn digamma(x: f64) -> PyResult<f64> {
    dpmm_anomaly::digamma(x).map_err(to_py)
}

/// Shard contents as `{"dim", "normalized", "records"}` with one dict per
/// record.
#[pyfunction]
fn read_shard(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyDict>> {
    let shard = dataio::read_shard(&path).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("dim", shard.dim)?;
    out.set_item("normalized", shard.normalized)?;
    let records = shard
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("image_id", &r.image_id)?;
            d.set_item("grid_h", r.grid_h)?;
            d.set_item("grid_w", r.grid_w)?;
            d.set_item("mask_path", &r.mask_path)?;
            d.set_item("data", rows(&r.data))?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    out.set_item("records", records)?;
    Ok(out)
}

/// `(image_id, grid_h, grid_w, mask_path, rows)`.
type RecordTuple = (String, usize, usize, Option<String>, Vec<Vec<f64>>);

/// Writes records given as `(image_id, grid_h, grid_w, mask_path, rows)`.
#[pyfunction]
#[pyo3(signature = (path, dim, records, normalized = false))]
fn write_shard(path: PathBuf, dim: usize, records: Vec<RecordTuple>, normalized: bool) -> PyResult<()> {
    let records = records
        .into_iter()
        .map(|(id, gh, gw, mask, data)| {
            let data = if data.is_empty() {
                Array2::zeros((0, dim))
            } else {
                matrix(&data)?
            };
            ShardRecord::new(id, gh, gw, mask, data).map_err(to_py)
        })
        .collect::<PyResult<Vec<_>>>()?;
    dataio::write_shard(
        &path,
        &Shard {
            dim,
            normalized,
            records,
        },
    )
    .map_err(to_py)
}

#[pyfunction]
fn read_map(path: PathBuf) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&dataio::read_map(&path).map_err(to_py)?.scores))
}

#[pyfunction]
fn read_mask(path: PathBuf) -> PyResult<Vec<Vec<bool>>> {
    let mask = dataio::read_mask_pgm(&path).map_err(to_py)?;
    Ok(mask.outer_iter().map(|r| r.to_vec()).collect())
}

#[pymodule]
fn dpmm_ad(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(aupr, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(select_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(patch_to_pixel, m)?)?;
    m.add_function(wrap_pyfunction!(paired_permutation_test, m)?)?;
    m.add_function(wrap_pyfunction!(digamma, m)?)?;
    m.add_function(wrap_pyfunction!(read_shard, m)?)?;
    m.add_function(wrap_pyfunction!(write_shard, m)?)?;
    m.add_function(wrap_pyfunction!(read_map, m)?)?;
    m.add_function(wrap_pyfunction!(read_mask, m)?)?;
    Ok(())
}
