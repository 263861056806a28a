//! Truncated Dirichlet-process mixture with diagonal Gaussian components.
//!
//! Weights are never stored directly. The model keeps the stick fractions
//! `v_k` and derives `π_k = v_k ∏_{j<k} (1 − v_j)` on demand, with the last
//! stick pinned to one so the truncated weights form a simplex.
//!
//! All densities are evaluated in log space. Patch embeddings in high
//! dimension make a single component dominate every row, so linear-space
//! mixtures underflow long before anything interesting happens.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Lower bound applied to every diagonal variance entry.
pub const DEFAULT_VAR_FLOOR: f64 = 1e-6;

const NORM_TOLERANCE: f64 = 1e-6;
const DEGENERATE_NORM: f64 = 1e-12;

/// A batch of embedding vectors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    data: Array2<f64>,
    normalized: bool,
}

impl EmbeddingBatch {
    /// Wraps raw (unnormalized) embeddings.
    pub fn new(data: Array2<f64>) -> Self {
        Self {
            data,
            normalized: false,
        }
    }

    /// Wraps embeddings whose rows are claimed to have unit L2 norm.
    ///
    /// Rows with (numerically) zero norm are tolerated, since
    /// [`normalize_rows`](crate::score::normalize_rows) leaves them untouched.
    pub fn new_normalized(data: Array2<f64>) -> Result<Self> {
        for (n, row) in data.outer_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm >= DEGENERATE_NORM && (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::invalid(format!("row {n} has L2 norm {norm}, expected 1")));
            }
        }
        Ok(Self { data, normalized: true })
    }

    pub(crate) fn from_parts_unchecked(data: Array2<f64>, normalized: bool) -> Self {
        Self { data, normalized }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::dims(d, row.len()));
            }
            flat.extend_from_slice(row);
        }
        let data = Array2::from_shape_vec((n, d), flat).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self::new(data))
    }

    /// Stacks batches row-wise. All batches must share the dimension and
    /// the normalization flag.
    pub fn concat(batches: &[EmbeddingBatch]) -> Result<Self> {
        let first = batches.first().ok_or(Error::Empty("no batches to concatenate"))?;
        let d = first.dim();
        let normalized = first.normalized;
        for b in batches {
            if b.dim() != d {
                return Err(Error::dims(d, b.dim()));
            }
            if b.normalized != normalized {
                return Err(Error::invalid("cannot mix normalized and raw batches"));
            }
        }
        let views: Vec<_> = batches.iter().map(|b| b.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self { data, normalized })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// Rows `start..end` as a new batch.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            data: self.data.slice(ndarray::s![start..end, ..]).to_owned(),
            normalized: self.normalized,
        }
    }
}

/// Moving averages of the per-component sufficient statistics.
///
/// `c_bar` holds only the diagonal of the responsibility-weighted second
/// moment because every covariance in this crate is diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// Smoothed responsibility mass per component; a simplex.
    pub p_bar: Array1<f64>,
    /// Smoothed responsibility-weighted first moments, K×D.
    pub m_bar: Array2<f64>,
    /// Smoothed responsibility-weighted squared values, K×D.
    pub c_bar: Array2<f64>,
    /// Embeddings per batch; turns averages into expected counts.
    pub batch_size: usize,
}

impl SufficientStats {
    pub fn num_components(&self) -> usize {
        self.p_bar.len()
    }

    pub fn dim(&self) -> usize {
        self.m_bar.ncols()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let k = self.p_bar.len();
        if k == 0 {
            return Err(Error::Empty("sufficient statistics with zero components"));
        }
        if self.m_bar.nrows() != k {
            return Err(Error::dims(k, self.m_bar.nrows()));
        }
        if self.c_bar.dim() != self.m_bar.dim() {
            return Err(Error::dims(self.m_bar.ncols(), self.c_bar.ncols()));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Truncated DPMM: K diagonal Gaussians with stick-breaking weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DpmmModel {
    means: Array2<f64>,
    vars: Array2<f64>,
    sticks: Array1<f64>,
    alpha: f64,
    normalized_input: bool,
}

impl DpmmModel {
    pub fn new(
        means: Array2<f64>,
        vars: Array2<f64>,
        sticks: Array1<f64>,
        alpha: f64,
        normalized_input: bool,
    ) -> Result<Self> {
        let (k, d) = means.dim();
        if k == 0 || d == 0 {
            return Err(Error::Empty("model needs at least one component and one dimension"));
        }
        if vars.dim() != (k, d) {
            return Err(Error::invalid(format!(
                "vars shape {:?} does not match means shape {:?}",
                vars.dim(),
                (k, d)
            )));
        }
        if sticks.len() != k {
            return Err(Error::dims(k, sticks.len()));
        }
        check_sticks(sticks.as_slice().expect("owned array is contiguous"))?;
        if let Some(v) = vars.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("variance {v} is not positive")));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("means must be finite"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha {alpha} is not positive")));
        }
        Ok(Self {
            means,
            vars,
            sticks,
            alpha,
            normalized_input,
        })
    }

    pub fn num_components(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn vars(&self) -> &Array2<f64> {
        &self.vars
    }

    pub fn sticks(&self) -> &Array1<f64> {
        &self.sticks
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn normalized_input(&self) -> bool {
        self.normalized_input
    }

    /// Mixture weights derived from the sticks.
    pub fn weights(&self) -> Array1<f64> {
        weights_unchecked(self.sticks.as_slice().expect("owned array is contiguous"))
    }

    pub(crate) fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha;
    }

    pub(crate) fn set_parameters(&mut self, means: Array2<f64>, vars: Array2<f64>, sticks: Array1<f64>) {
        debug_assert_eq!(means.dim(), self.means.dim());
        debug_assert_eq!(vars.dim(), self.vars.dim());
        debug_assert_eq!(sticks.len(), self.sticks.len());
        self.means = means;
        self.vars = vars;
        self.sticks = sticks;
    }

    fn check_batch(&self, batch: &EmbeddingBatch) -> Result<()> {
        if batch.dim() != self.dim() {
            return Err(Error::dims(self.dim(), batch.dim()));
        }
        Ok(())
    }
}

fn check_sticks(sticks: &[f64]) -> Result<()> {
    let last = *sticks.last().ok_or(Error::Empty("stick vector"))?;
    if let Some((k, v)) = sticks.iter().enumerate().find(|(_, v)| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Error::invalid(format!("stick {k} = {v} is outside (0, 1]")));
    }
    if last != 1.0 {
        return Err(Error::invalid(format!("last stick must be exactly 1, found {last}")));
    }
    Ok(())
}

fn weights_unchecked(sticks: &[f64]) -> Array1<f64> {
    let mut remaining = 1.0;
    sticks
        .iter()
        .map(|&v| {
            let w = v * remaining;
            remaining *= 1.0 - v;
            w
        })
        .collect()
}

/// Stick-breaking weights `π_1 = v_1`, `π_k = v_k ∏_{j<k} (1 − v_j)`.
///
/// The last stick must be exactly 1 so that `π_K` absorbs what is left.
pub fn stick_breaking_weights(sticks: &[f64]) -> Result<Array1<f64>> {
    check_sticks(sticks)?;
    Ok(weights_unchecked(sticks))
}

/// Log density of a diagonal Gaussian.
pub fn diag_gaussian_logpdf(y: ArrayView1<f64>, mean: ArrayView1<f64>, var: ArrayView1<f64>) -> Result<f64> {
    if y.len() != mean.len() {
        return Err(Error::dims(mean.len(), y.len()));
    }
    if var.len() != mean.len() {
        return Err(Error::dims(mean.len(), var.len()));
    }
    if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid(format!("variance {v} is not positive")));
    }
    let mut acc = 0.0;
    Zip::from(&y).and(&mean).and(&var).for_each(|&y, &m, &v| {
        let r = y - m;
        acc += (LN_2PI + v.ln()) + r * r / v;
    });
    Ok(-0.5 * acc)
}

/// Per-component terms shared by every row: `log π_k − ½ Σ_d log(2π σ²_kd)`
/// and the inverse variances.
pub(crate) struct ComponentTable {
    log_offset: Array1<f64>,
    inv_vars: Array2<f64>,
}

impl ComponentTable {
    pub(crate) fn new(model: &DpmmModel, with_weights: bool) -> Self {
        let weights = model.weights();
        let d = model.dim() as f64;
        let log_offset = model
            .vars
            .outer_iter()
            .zip(weights.iter())
            .map(|(var, &w)| {
                let log_norm = -0.5 * (d * LN_2PI + var.iter().map(|v| v.ln()).sum::<f64>());
                if with_weights {
                    // ln(0) = -inf drops vanished components exactly.
                    w.ln() + log_norm
                } else {
                    log_norm
                }
            })
            .collect();
        let inv_vars = model.vars.mapv(|v| 1.0 / v);
        Self { log_offset, inv_vars }
    }

    /// Writes `log π_k + log N(y | θ_k)` (or without the weight) into `out`.
    pub(crate) fn log_joint_into(&self, model: &DpmmModel, y: ArrayView1<f64>, out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            let offset = self.log_offset[k];
            if offset == f64::NEG_INFINITY {
                *slot = f64::NEG_INFINITY;
                continue;
            }
            let mean = model.means.row(k);
            let inv = self.inv_vars.row(k);
            let mut quad = 0.0;
            for ((&yd, &md), &id) in y.iter().zip(mean.iter()).zip(inv.iter()) {
                let r = yd - md;
                quad += r * r * id;
            }
            *slot = offset - 0.5 * quad;
        }
    }
}

/// `log Σ exp(x)`; errors if every entry is `-inf` or the result is not finite.
fn log_sum_exp(values: &[f64]) -> Result<(f64, f64)> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical(format!(
            "all component log densities are {max}; cannot normalize"
        )));
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok((max + sum.ln(), max))
}

/// Posterior component probabilities, N×K, computed in log space.
pub fn responsibilities(batch: &EmbeddingBatch, model: &DpmmModel) -> Result<Array2<f64>> {
    model.check_batch(batch)?;
    let k = model.num_components();
    let table = ComponentTable::new(model, true);
    let mut resp = Array2::<f64>::zeros((batch.len(), k));
    resp.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(batch.data.axis_iter(Axis(0)).into_par_iter())
        .try_for_each(|(mut out, y)| -> Result<()> {
            let row = out
                .as_slice_mut()
                .expect("rows of a standard-layout array are contiguous");
            table.log_joint_into(model, y, row);
            let (lse, _) = log_sum_exp(row)?;
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
            Ok(())
        })?;
    Ok(resp)
}

/// Per-row `log p(y_n | Φ)`.
pub fn row_log_likelihoods(batch: &EmbeddingBatch, model: &DpmmModel) -> Result<Vec<f64>> {
    model.check_batch(batch)?;
    let k = model.num_components();
    let table = ComponentTable::new(model, true);
    batch
        .data
        .axis_iter(Axis(0))
        .into_par_iter()
        .map_init(
            || vec![0.0; k],
            |scratch, y| {
                table.log_joint_into(model, y, scratch);
                log_sum_exp(scratch).map(|(lse, _)| lse)
            },
        )
        .collect()
}

/// `Σ_n log Σ_k π_k N(y_n | θ_k)`. Rows are reduced in order, so the value
/// does not depend on the thread count.
pub fn mixture_log_likelihood(batch: &EmbeddingBatch, model: &DpmmModel) -> Result<f64> {
    Ok(row_log_likelihoods(batch, model)?.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(means: Array2<f64>, vars: Array2<f64>, sticks: Array1<f64>) -> DpmmModel {
        DpmmModel::new(means, vars, sticks, 1.0, false).unwrap()
    }

    #[test]
    fn stick_weights_examples() {
        assert_eq!(stick_breaking_weights(&[1.0]).unwrap().to_vec(), vec![1.0]);
        assert_eq!(
            stick_breaking_weights(&[0.5, 0.5, 1.0]).unwrap().to_vec(),
            vec![0.5, 0.25, 0.25]
        );
        assert_eq!(
            stick_breaking_weights(&[1.0, 1.0, 1.0]).unwrap().to_vec(),
            vec![1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn stick_weights_reject_bad_input() {
        assert!(stick_breaking_weights(&[0.5, 0.9]).is_err());
        assert!(stick_breaking_weights(&[0.0, 1.0]).is_err());
        assert!(stick_breaking_weights(&[1.5, 1.0]).is_err());
        assert!(stick_breaking_weights(&[f64::NAN, 1.0]).is_err());
        assert!(stick_breaking_weights(&[]).is_err());
    }

    #[test]
    fn stick_weights_are_a_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let k = rng.random_range(1..60);
            let mut sticks: Vec<f64> = (0..k).map(|_| 1.0 - rng.random::<f64>()).collect();
            sticks[k - 1] = 1.0;
            let w = stick_breaking_weights(&sticks).unwrap();
            assert!(w.iter().all(|&x| x >= 0.0));
            assert_abs_diff_eq!(w.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn logpdf_reference_values() {
        let v = |x: &[f64]| Array::from_vec(x.to_vec());
        let lp = diag_gaussian_logpdf(v(&[0.0]).view(), v(&[0.0]).view(), v(&[1.0]).view()).unwrap();
        assert_abs_diff_eq!(lp, -0.918_938_533_2, epsilon = 1e-10);
        let lp = diag_gaussian_logpdf(v(&[3.0, -1.0]).view(), v(&[3.0, -1.0]).view(), v(&[1.0, 1.0]).view()).unwrap();
        assert_abs_diff_eq!(lp, -1.837_877_066_4, epsilon = 1e-10);
        let lp = diag_gaussian_logpdf(v(&[1.0]).view(), v(&[0.0]).view(), v(&[1.0]).view()).unwrap();
        assert_abs_diff_eq!(lp, -1.418_938_533_2, epsilon = 1e-10);
        assert!(diag_gaussian_logpdf(v(&[1.0]).view(), v(&[0.0]).view(), v(&[0.0]).view()).is_err());
    }

    #[test]
    fn logpdf_is_symmetric_in_point_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = rng.random_range(1..10);
            let y: Array1<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let m: Array1<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let v: Array1<f64> = (0..d).map(|_| rng.random_range(0.01..4.0)).collect();
            let a = diag_gaussian_logpdf(y.view(), m.view(), v.view()).unwrap();
            let b = diag_gaussian_logpdf(m.view(), y.view(), v.view()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn responsibilities_single_component() {
        let m = model(array![[0.0, 0.0]], array![[1.0, 1.0]], array![1.0]);
        let b = EmbeddingBatch::new(array![[1.0, 2.0], [-4.0, 0.5]]);
        let r = responsibilities(&b, &m).unwrap();
        assert_eq!(r, array![[1.0], [1.0]]);
    }

    #[test]
    fn responsibilities_identical_components_split_evenly() {
        let m = model(array![[1.0], [1.0]], array![[2.0], [2.0]], array![0.5, 1.0]);
        let b = EmbeddingBatch::new(array![[0.0], [3.0], [-7.0]]);
        let r = responsibilities(&b, &m).unwrap();
        for row in r.outer_iter() {
            assert_abs_diff_eq!(row[0], 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(row[1], 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn responsibilities_far_component() {
        let m = model(array![[0.0], [10.0]], array![[1.0], [1.0]], array![0.5, 1.0]);
        let b = EmbeddingBatch::new(array![[0.0]]);
        let r = responsibilities(&b, &m).unwrap();
        // Scalar reference: exp(-50) / (1 + exp(-50)).
        let expected = (-50.0f64).exp() / (1.0 + (-50.0f64).exp());
        assert_abs_diff_eq!(r[[0, 1]], expected, epsilon = 1e-30);
        assert_abs_diff_eq!(r[[0, 1]], 1.93e-22, epsilon = 0.01e-22);
        assert_abs_diff_eq!(r.row(0).sum(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn vanished_components_get_exactly_zero() {
        let m = model(
            array![[0.0], [0.0], [0.0]],
            array![[1.0], [1.0], [1.0]],
            array![1.0, 0.5, 1.0],
        );
        let b = EmbeddingBatch::new(array![[0.3], [2.0]]);
        let r = responsibilities(&b, &m).unwrap();
        assert!(r.column(1).iter().all(|&v| v == 0.0));
        assert!(r.column(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn responsibilities_reject_dimension_mismatch() {
        let m = model(array![[0.0]], array![[1.0]], array![1.0]);
        let b = EmbeddingBatch::new(array![[0.0, 1.0]]);
        assert!(matches!(
            responsibilities(&b, &m),
            Err(Error::DimensionMismatch { expected: 1, found: 2 })
        ));
        assert!(mixture_log_likelihood(&b, &m).is_err());
    }

    fn random_model(rng: &mut ChaCha8Rng, k: usize, d: usize) -> DpmmModel {
        let means = Array2::from_shape_fn((k, d), |_| rng.random_range(-3.0..3.0));
        let vars = Array2::from_shape_fn((k, d), |_| rng.random_range(0.05..3.0));
        let mut sticks: Array1<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        sticks[k - 1] = 1.0;
        model(means, vars, sticks)
    }

    #[test]
    fn responsibility_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let k = rng.random_range(1..12);
            let d = rng.random_range(1..6);
            let m = random_model(&mut rng, k, d);
            let n = rng.random_range(1..8);
            let b = EmbeddingBatch::new(Array2::from_shape_fn((n, d), |_| rng.random_range(-20.0..20.0)));
            let r = responsibilities(&b, &m).unwrap();
            for row in r.outer_iter() {
                assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn log_likelihood_examples() {
        let m = model(array![[0.0]], array![[1.0]], array![1.0]);
        let empty = EmbeddingBatch::new(Array2::zeros((0, 1)));
        assert_eq!(mixture_log_likelihood(&empty, &m).unwrap(), 0.0);
        let one = EmbeddingBatch::new(array![[0.0]]);
        assert_abs_diff_eq!(
            mixture_log_likelihood(&one, &m).unwrap(),
            -0.918_938_533_2,
            epsilon = 1e-10
        );
    }

    #[test]
    fn log_likelihood_is_additive_over_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(&mut rng, 4, 3);
        let b = EmbeddingBatch::new(Array2::from_shape_fn((25, 3), |_| rng.random_range(-4.0..4.0)));
        let doubled = EmbeddingBatch::concat(&[b.clone(), b.clone()]).unwrap();
        let single = mixture_log_likelihood(&b, &m).unwrap();
        assert_abs_diff_eq!(
            mixture_log_likelihood(&doubled, &m).unwrap(),
            2.0 * single,
            epsilon = 1e-9
        );
    }

    /// Sticks reproducing a given weight vector.
    fn sticks_for(weights: &[f64]) -> Array1<f64> {
        let mut remaining = 1.0;
        let k = weights.len();
        weights
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                if i + 1 == k {
                    1.0
                } else {
                    let v = w / remaining;
                    remaining -= w;
                    v
                }
            })
            .collect()
    }

    #[test]
    fn log_likelihood_invariant_under_weight_preserving_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let k = 4;
            let d = 3;
            let base = random_model(&mut rng, k, d);
            let w = base.weights();
            let (i, j) = (0, 2);
            let mut means = base.means().clone();
            let mut vars = base.vars().clone();
            let mut perm_w = w.to_vec();
            for arr in [&mut means, &mut vars] {
                let ri = arr.row(i).to_owned();
                let rj = arr.row(j).to_owned();
                arr.row_mut(i).assign(&rj);
                arr.row_mut(j).assign(&ri);
            }
            perm_w.swap(i, j);
            let swapped = model(means, vars, sticks_for(&perm_w));
            let b = EmbeddingBatch::new(Array2::from_shape_fn((30, d), |_| rng.random_range(-4.0..4.0)));
            assert_abs_diff_eq!(
                mixture_log_likelihood(&b, &base).unwrap(),
                mixture_log_likelihood(&b, &swapped).unwrap(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn normalized_batch_checks_norms() {
        assert!(EmbeddingBatch::new_normalized(array![[0.6, 0.8], [0.0, 0.0]]).is_ok());
        assert!(EmbeddingBatch::new_normalized(array![[3.0, 4.0]]).is_err());
    }

    #[test]
    fn model_rejects_bad_parameters() {
        assert!(DpmmModel::new(array![[0.0]], array![[0.0]], array![1.0], 1.0, false).is_err());
        assert!(DpmmModel::new(array![[0.0]], array![[1.0]], array![0.5], 1.0, false).is_err());
        assert!(DpmmModel::new(array![[0.0]], array![[1.0]], array![1.0], 0.0, false).is_err());
        assert!(DpmmModel::new(array![[0.0]], array![[1.0, 1.0]], array![1.0], 1.0, false).is_err());
    }
}
