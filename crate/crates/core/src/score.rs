//! Prototype scoring: distance of each patch embedding to the closest
//! surviving component mean, patch-to-pixel interpolation and
//! FPR-calibrated binarization.
//!
//! Every score is oriented so that larger means more anomalous.

use std::fmt;
use std::str::FromStr;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::effective_components;
use crate::mixture::{DpmmModel, EmbeddingBatch, LN_2PI};

const DEGENERATE_NORM: f64 = 1e-12;

/// Proximity used both for scoring and for component assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ScoreMethod {
    /// `1 − max_k cos(y, μ_k)`.
    #[default]
    Cosine,
    /// `min_k ‖y − μ_k‖₂`.
    Euclidean,
    /// `−max_k log N(y | μ_k, Σ_k)`, the best single component.
    Likelihood,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 3] = [ScoreMethod::Cosine, ScoreMethod::Euclidean, ScoreMethod::Likelihood];

    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMethod::Cosine => "cosine",
            ScoreMethod::Euclidean => "euclidean",
            ScoreMethod::Likelihood => "likelihood",
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(ScoreMethod::Cosine),
            "euclidean" => Ok(ScoreMethod::Euclidean),
            "likelihood" => Ok(ScoreMethod::Likelihood),
            other => Err(Error::invalid(format!(
                "unknown score method {other:?}; expected cosine, euclidean or likelihood"
            ))),
        }
    }
}

/// Per-patch scores on the backbone's token grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    scores: Array2<f64>,
}

impl PatchGrid {
    pub fn new(scores: Array2<f64>) -> Result<Self> {
        if scores.nrows() == 0 || scores.ncols() == 0 {
            return Err(Error::Empty("patch grid needs at least one row and column"));
        }
        Ok(Self { scores })
    }

    /// Lays out row-major patch scores (patch `(i, j)` at `i·w + j`).
    pub fn from_scores(scores: Vec<f64>, grid_h: usize, grid_w: usize) -> Result<Self> {
        if scores.len() != grid_h * grid_w {
            return Err(Error::dims(grid_h * grid_w, scores.len()));
        }
        let arr = Array2::from_shape_vec((grid_h, grid_w), scores).map_err(|e| Error::invalid(e.to_string()))?;
        Self::new(arr)
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn shape(&self) -> (usize, usize) {
        self.scores.dim()
    }
}

/// Pixel-resolution anomaly scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    pub scores: Array2<f64>,
    pub source_id: String,
}

impl AnomalyMap {
    pub fn new(scores: Array2<f64>, source_id: impl Into<String>) -> Result<Self> {
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("anomaly map entries must be finite"));
        }
        Ok(Self {
            scores,
            source_id: source_id.into(),
        })
    }

    pub fn height(&self) -> usize {
        self.scores.nrows()
    }

    pub fn width(&self) -> usize {
        self.scores.ncols()
    }
}

/// Scales every row to unit L2 norm. Rows with norm below 1e-12 are left
/// as they are; their count is returned alongside the batch.
pub fn normalize_rows(batch: &EmbeddingBatch) -> (EmbeddingBatch, usize) {
    let mut data = batch.data().clone();
    let mut degenerate = 0;
    for mut row in data.outer_iter_mut() {
        let norm = row.dot(&row).sqrt();
        if norm < DEGENERATE_NORM {
            degenerate += 1;
        } else {
            row /= norm;
        }
    }
    if degenerate > 0 {
        warn!("{degenerate} embedding rows have zero norm and were left unnormalized");
    }
    (EmbeddingBatch::from_parts_unchecked(data, true), degenerate)
}

fn unit(v: ArrayView1<f64>) -> Array1<f64> {
    let norm = v.dot(&v).sqrt();
    if norm < DEGENERATE_NORM {
        v.to_owned()
    } else {
        &v / norm
    }
}

/// Prototypes of a model prepared for one scoring method.
///
/// Building this once and reusing it across images avoids recomputing the
/// effective set and the normalized means for every record.
#[derive(Debug, Clone)]
pub struct Scorer<'m> {
    model: &'m DpmmModel,
    method: ScoreMethod,
    effective: Vec<usize>,
    /// Unit means (cosine) or raw means (other methods), one row per
    /// effective component.
    prototypes: Array2<f64>,
    inv_vars: Array2<f64>,
    log_norm: Array1<f64>,
}

impl<'m> Scorer<'m> {
    pub fn new(model: &'m DpmmModel, method: ScoreMethod, t_pi: f64) -> Result<Self> {
        let effective = effective_components(model, t_pi)?;
        let means = model.means().select(Axis(0), &effective);
        let prototypes = match method {
            ScoreMethod::Cosine => {
                let mut out = means.clone();
                for (mut dst, src) in out.outer_iter_mut().zip(means.outer_iter()) {
                    dst.assign(&unit(src));
                }
                out
            }
            _ => means,
        };
        let vars = model.vars().select(Axis(0), &effective);
        let d = model.dim() as f64;
        let log_norm = vars
            .outer_iter()
            .map(|v| -0.5 * (d * LN_2PI + v.iter().map(|x| x.ln()).sum::<f64>()))
            .collect();
        Ok(Self {
            model,
            method,
            effective,
            prototypes,
            inv_vars: vars.mapv(|v| 1.0 / v),
            log_norm,
        })
    }

    pub fn method(&self) -> ScoreMethod {
        self.method
    }

    /// Indices (into the model) of the components used as prototypes.
    pub fn effective(&self) -> &[usize] {
        &self.effective
    }

    fn check(&self, batch: &EmbeddingBatch) -> Result<()> {
        if batch.dim() != self.model.dim() {
            return Err(Error::dims(self.model.dim(), batch.dim()));
        }
        if batch.is_normalized() != self.model.normalized_input() {
            let label = |n: bool| if n { "normalized" } else { "raw" };
            return Err(Error::NormalizationMismatch {
                model: label(self.model.normalized_input()),
                batch: label(batch.is_normalized()),
            });
        }
        Ok(())
    }

    /// Proximity of `y` to prototype `p`, oriented so larger is closer.
    fn closeness(&self, y: ArrayView1<f64>, y_unit: &Array1<f64>, p: usize) -> f64 {
        let proto = self.prototypes.row(p);
        match self.method {
            ScoreMethod::Cosine => y_unit.dot(&proto),
            ScoreMethod::Euclidean => -y.iter().zip(proto.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            ScoreMethod::Likelihood => {
                let quad: f64 = y
                    .iter()
                    .zip(proto.iter())
                    .zip(self.inv_vars.row(p).iter())
                    .map(|((a, b), iv)| (a - b) * (a - b) * iv)
                    .sum();
                self.log_norm[p] - 0.5 * quad
            }
        }
    }

    /// Best prototype position (ties → lowest) and its closeness.
    fn best(&self, y: ArrayView1<f64>) -> (usize, f64) {
        let y_unit = match self.method {
            ScoreMethod::Cosine => unit(y),
            _ => Array1::zeros(0),
        };
        let mut best = (0, f64::NEG_INFINITY);
        for p in 0..self.effective.len() {
            let c = self.closeness(y, &y_unit, p);
            if c > best.1 {
                best = (p, c);
            }
        }
        best
    }

    fn score_from_closeness(&self, closeness: f64) -> f64 {
        match self.method {
            ScoreMethod::Cosine => 1.0 - closeness,
            ScoreMethod::Euclidean => (-closeness).max(0.0).sqrt(),
            ScoreMethod::Likelihood => -closeness,
        }
    }

    pub fn scores(&self, batch: &EmbeddingBatch) -> Result<Vec<f64>> {
        self.check(batch)?;
        Ok(batch
            .data()
            .axis_iter(Axis(0))
            .into_par_iter()
            .map(|y| self.score_from_closeness(self.best(y).1))
            .collect())
    }

    pub fn assign(&self, batch: &EmbeddingBatch) -> Result<Vec<usize>> {
        self.check(batch)?;
        Ok(batch
            .data()
            .axis_iter(Axis(0))
            .into_par_iter()
            .map(|y| self.effective[self.best(y).0])
            .collect())
    }
}

/// Per-row anomaly scores against the components with weight above `t_pi`.
pub fn anomaly_scores(batch: &EmbeddingBatch, model: &DpmmModel, method: ScoreMethod, t_pi: f64) -> Result<Vec<f64>> {
    Scorer::new(model, method, t_pi)?.scores(batch)
}

/// Index of the closest effective component for every row; ties go to the
/// lowest index.
pub fn component_assignment(
    batch: &EmbeddingBatch,
    model: &DpmmModel,
    method: ScoreMethod,
    t_pi: f64,
) -> Result<Vec<usize>> {
    Scorer::new(model, method, t_pi)?.assign(batch)
}

/// Source coordinate of output pixel `i` when `n_out` pixels cover `n_in`
/// centre-aligned samples, clamped to the sample range.
fn source_coord(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let u = (i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
    let u = u.clamp(0.0, (n_in - 1) as f64);
    let lo = u.floor() as usize;
    let hi = (lo + 1).min(n_in - 1);
    (lo, hi, u - lo as f64)
}

/// Bilinear upsampling with each patch score placed at its patch centre
/// and edge clamping outside the outermost centres.
pub fn patch_to_pixel(grid: &PatchGrid, height: usize, width: usize) -> Result<AnomalyMap> {
    if height == 0 || width == 0 {
        return Err(Error::Empty("target map size must be positive"));
    }
    let (gh, gw) = grid.shape();
    if height < gh || width < gw {
        return Err(Error::invalid(format!(
            "target {height}x{width} is smaller than the {gh}x{gw} patch grid"
        )));
    }
    let g = grid.scores();
    let cols: Vec<_> = (0..width).map(|j| source_coord(j, gw, width)).collect();
    let mut out = Array2::<f64>::zeros((height, width));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let (r0, r1, fr) = source_coord(i, gh, height);
            for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                let top = g[[r0, c0]] + fc * (g[[r0, c1]] - g[[r0, c0]]);
                let bottom = g[[r1, c0]] + fc * (g[[r1, c1]] - g[[r1, c0]]);
                row[j] = top + fr * (bottom - top);
            }
        });
    AnomalyMap::new(out, String::new())
}

/// Smallest `t` with `#{s > t} / n ≤ target_fpr`.
pub fn select_threshold(normal_scores: &[f64], target_fpr: f64) -> Result<f64> {
    if normal_scores.is_empty() {
        return Err(Error::Empty("threshold calibration needs at least one score"));
    }
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::invalid(format!("target FPR {target_fpr} is outside (0, 1)")));
    }
    if normal_scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let mut sorted = normal_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let fraction = |m: usize| m as f64 / n as f64;
    // Largest count of scores allowed strictly above the threshold.
    let mut allowed = ((target_fpr * n as f64).floor() as usize).min(n - 1);
    while allowed + 1 < n && fraction(allowed + 1) <= target_fpr {
        allowed += 1;
    }
    while allowed > 0 && fraction(allowed) > target_fpr {
        allowed -= 1;
    }
    Ok(sorted[n - 1 - allowed])
}

/// `score > threshold`, pixel by pixel.
pub fn binarize(map: &AnomalyMap, threshold: f64) -> Array2<bool> {
    map.scores.mapv(|s| s > threshold)
}
