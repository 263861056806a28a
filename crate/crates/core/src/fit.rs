//! Batched EM with exponentially smoothed sufficient statistics.
//!
//! Each mini-batch runs one E-step (responsibilities under the current
//! model), folds the batch averages into the moving statistics with
//! discount `gamma`, re-derives the component parameters and stick
//! fractions from those statistics, and finally re-estimates the
//! concentration parameter. After every epoch the model is scored on the
//! validation shards and the best snapshot is kept.

use std::ops::Range;
use std::time::Instant;

use log::{debug, info};
use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, FormatError, Result};
use crate::mixture::{mixture_log_likelihood, responsibilities, DpmmModel, EmbeddingBatch, SufficientStats};
use crate::special::digamma;

const STICK_EPS: f64 = 1e-12;
const STARVED_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Truncation level.
    pub k: usize,
    /// Moving-average discount, in (0, 1].
    pub gamma: f64,
    pub epochs: usize,
    /// Target number of embedding rows per mini-batch.
    pub batch_vectors: usize,
    pub alpha_init: f64,
    pub seed: u64,
    pub var_floor: f64,
    pub alpha_clamp: (f64, f64),
    /// One batch holding all data, `gamma = 1` and a fixed `alpha`:
    /// plain EM, used to check likelihood monotonicity.
    pub full_batch_mode: bool,
    /// Weight threshold used when reporting the surviving component count.
    pub t_pi: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 500,
            gamma: 0.2,
            epochs: 40,
            batch_vectors: 12288,
            alpha_init: 1.0,
            seed: 0,
            var_floor: crate::mixture::DEFAULT_VAR_FLOOR,
            alpha_clamp: (1e-3, 1e6),
            full_batch_mode: false,
            t_pi: 1e-6,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        check_gamma(self.gamma)?;
        if self.batch_vectors == 0 {
            return Err(Error::invalid("batch_vectors must be positive"));
        }
        if !(self.var_floor > 0.0 && self.var_floor.is_finite()) {
            return Err(Error::invalid("var_floor must be positive"));
        }
        let (lo, hi) = self.alpha_clamp;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(format!(
                "alpha_clamp ({lo}, {hi}) is not a positive interval"
            )));
        }
        if !(self.alpha_init > 0.0 && self.alpha_init.is_finite()) {
            return Err(Error::invalid("alpha_init must be positive"));
        }
        if !(self.t_pi >= 0.0) {
            return Err(Error::invalid("t_pi must be non-negative"));
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!("gamma = {gamma} is outside (0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    /// Validation log-likelihood after each epoch.
    pub val_log_likelihood: Vec<f64>,
    /// Components above `t_pi` after each epoch.
    pub effective_per_epoch: Vec<usize>,
    pub epoch_seconds: Vec<f64>,
    /// Argmax of the validation trace, earliest on ties. `None` when no
    /// epoch ran.
    pub best_epoch: Option<usize>,
    /// Components above `t_pi` in the returned model.
    pub effective_components: usize,
}

/// Result of a fit: the selected model, the statistics it was derived
/// from (needed to resume), and the trace.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: DpmmModel,
    pub stats: SufficientStats,
    pub report: FitReport,
}

/// Seeds the model from the first batch.
///
/// Means are rows drawn with replacement, every variance is the global
/// per-dimension variance, and the sticks give uniform weights.
pub fn init_model(first_batch: &EmbeddingBatch, config: &FitConfig) -> Result<(DpmmModel, SufficientStats)> {
    config.validate()?;
    if first_batch.is_empty() {
        return Err(Error::Empty("cannot initialize from an empty batch"));
    }
    let k = config.k;
    let data = first_batch.data();
    let n = data.nrows() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut means = Array2::<f64>::zeros((k, first_batch.dim()));
    for mut row in means.outer_iter_mut() {
        let pick = rng.random_range(0..data.nrows());
        row.assign(&data.row(pick));
    }

    let global_mean = data.sum_axis(Axis(0)) / n;
    let second_moment = data.mapv(|v| v * v).sum_axis(Axis(0)) / n;
    let global_var = ndarray::Zip::from(&second_moment)
        .and(&global_mean)
        .map_collect(|&s, &m| (s - m * m).max(config.var_floor));
    let vars = global_var
        .broadcast((k, first_batch.dim()))
        .expect("row broadcast")
        .to_owned();

    let sticks: Array1<f64> = (0..k).map(|i| 1.0 / (k - i) as f64).collect();
    let model = DpmmModel::new(means, vars, sticks, config.alpha_init, first_batch.is_normalized())?;

    let share = 1.0 / k as f64;
    let stats = SufficientStats {
        p_bar: Array1::from_elem(k, share),
        m_bar: (&global_mean * share)
            .broadcast((k, first_batch.dim()))
            .expect("row broadcast")
            .to_owned(),
        c_bar: (&second_moment * share)
            .broadcast((k, first_batch.dim()))
            .expect("row broadcast")
            .to_owned(),
        batch_size: first_batch.len().min(config.batch_vectors),
    };
    Ok((model, stats))
}

/// Folds one batch into the moving averages:
/// `stat ← (1 − γ)·stat + γ·mean_n(resp[n, k] · f(y_n))` for
/// `f(y) ∈ {1, y, y²}`.
pub fn update_stats(
    stats: &SufficientStats,
    resp: &Array2<f64>,
    batch: &EmbeddingBatch,
    gamma: f64,
) -> Result<SufficientStats> {
    check_gamma(gamma)?;
    stats.validate()?;
    let k = stats.num_components();
    if resp.ncols() != k {
        return Err(Error::dims(k, resp.ncols()));
    }
    if resp.nrows() != batch.len() {
        return Err(Error::dims(batch.len(), resp.nrows()));
    }
    if batch.dim() != stats.dim() {
        return Err(Error::dims(stats.dim(), batch.dim()));
    }
    if batch.is_empty() {
        return Err(Error::Empty("update_stats needs at least one row"));
    }
    for (n, row) in resp.outer_iter().enumerate() {
        let s = row.sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("responsibility row {n} sums to {s}")));
        }
    }

    let inv_n = 1.0 / batch.len() as f64;
    let y = batch.data();
    let batch_p = resp.sum_axis(Axis(0)) * inv_n;
    let batch_m = resp.t().dot(y) * inv_n;
    let batch_c = resp.t().dot(&y.mapv(|v| v * v)) * inv_n;

    let keep = 1.0 - gamma;
    Ok(SufficientStats {
        p_bar: &stats.p_bar * keep + &batch_p * gamma,
        m_bar: &stats.m_bar * keep + &batch_m * gamma,
        c_bar: &stats.c_bar * keep + &batch_c * gamma,
        batch_size: stats.batch_size,
    })
}

/// Component parameters produced by [`m_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct MStep {
    pub means: Array2<f64>,
    pub vars: Array2<f64>,
    pub sticks: Array1<f64>,
}

/// Parameters from the moving statistics.
///
/// Means and diagonal variances are normalized per component
/// (`m̄_k / p̄_k`, `c̄_k / p̄_k − μ_k²`). Sticks use the MAP under the
/// Beta(1, α) prior with the prior term on the expected-count scale:
/// `v_k = p̄_k / (p̄_k + (α − 1)/B + Σ_{j>k} p̄_j)`.
///
/// A component whose mass has fallen below 1e-12 keeps its previous mean
/// and gets floored variances.
pub fn m_step(
    stats: &SufficientStats,
    alpha_prev: f64,
    previous_means: &Array2<f64>,
    config: &FitConfig,
) -> Result<MStep> {
    stats.validate()?;
    let k = stats.num_components();
    if previous_means.dim() != stats.m_bar.dim() {
        return Err(Error::dims(stats.dim(), previous_means.ncols()));
    }
    let total = stats.p_bar.sum();
    if (total - 1.0).abs() > 1e-6 || stats.p_bar.iter().any(|p| *p < 0.0) {
        return Err(Error::invalid(format!("p_bar is not a simplex (sum {total})")));
    }

    let mut means = Array2::<f64>::zeros(stats.m_bar.dim());
    let mut vars = Array2::<f64>::zeros(stats.m_bar.dim());
    for c in 0..k {
        let p = stats.p_bar[c];
        let mut mean = means.row_mut(c);
        let mut var = vars.row_mut(c);
        if p < STARVED_MASS {
            mean.assign(&previous_means.row(c));
            var.fill(config.var_floor);
            continue;
        }
        for d in 0..stats.dim() {
            let mu = stats.m_bar[[c, d]] / p;
            mean[d] = mu;
            var[d] = (stats.c_bar[[c, d]] / p - mu * mu).max(config.var_floor);
        }
    }

    let prior = (alpha_prev - 1.0) / stats.batch_size as f64;
    let mut sticks = Array1::<f64>::ones(k);
    let mut tail = 0.0;
    for c in (0..k.saturating_sub(1)).rev() {
        tail += stats.p_bar[c + 1];
        let denom = stats.p_bar[c] + prior + tail;
        sticks[c] = if denom <= 0.0 {
            1.0 - STICK_EPS
        } else {
            (stats.p_bar[c] / denom).clamp(STICK_EPS, 1.0 - STICK_EPS)
        };
    }
    Ok(MStep { means, vars, sticks })
}

/// Concentration update
/// `α ← (K − 1) / Σ_{k<K} [Ψ(α + 1 + C_k + C_{>k}) − Ψ(α + C_{>k})]`
/// with expected counts `C_k = B·p̄_k`, clamped to `alpha_clamp`.
pub fn update_alpha(stats: &SufficientStats, alpha_prev: f64, config: &FitConfig) -> Result<f64> {
    if !(alpha_prev > 0.0 && alpha_prev.is_finite()) {
        return Err(Error::invalid(format!("alpha_prev = {alpha_prev} must be positive")));
    }
    stats.validate()?;
    let k = stats.num_components();
    if k == 1 {
        return Ok(alpha_prev);
    }
    let b = stats.batch_size as f64;
    let mut denom = 0.0;
    let mut tail = 0.0;
    for c in (0..k - 1).rev() {
        tail += stats.p_bar[c + 1];
        let count = b * stats.p_bar[c];
        let count_after = b * tail;
        denom += digamma(alpha_prev + 1.0 + count + count_after)? - digamma(alpha_prev + count_after)?;
    }
    if !(denom > 0.0 && denom.is_finite()) {
        return Err(Error::Numerical(format!("alpha update denominator is {denom}")));
    }
    let (lo, hi) = config.alpha_clamp;
    Ok(((k - 1) as f64 / denom).clamp(lo, hi))
}

/// Indices whose weight exceeds `t_pi`, ascending.
pub fn effective_components(model: &DpmmModel, t_pi: f64) -> Result<Vec<usize>> {
    if !(t_pi >= 0.0) {
        return Err(Error::invalid(format!("t_pi = {t_pi} must be non-negative")));
    }
    let weights = model.weights();
    let max = weights.iter().copied().fold(0.0, f64::max);
    if t_pi >= max {
        return Err(Error::invalid(format!(
            "t_pi = {t_pi} is not below the largest weight {max}; no prototypes would remain"
        )));
    }
    Ok(weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > t_pi)
        .map(|(k, _)| k)
        .collect())
}

/// Fits a fresh model.
pub fn fit(train: &[EmbeddingBatch], val: &[EmbeddingBatch], config: &FitConfig) -> Result<Fitted> {
    fit_from(train, val, config, None)
}

/// Continues fitting from a checkpointed model and its statistics.
pub fn fit_resume(
    train: &[EmbeddingBatch],
    val: &[EmbeddingBatch],
    config: &FitConfig,
    model: DpmmModel,
    stats: Option<SufficientStats>,
) -> Result<Fitted> {
    let stats = stats.ok_or(FormatError::MissingStats)?;
    if model.num_components() != config.k {
        return Err(Error::invalid(format!(
            "checkpoint has {} components, config asks for {}",
            model.num_components(),
            config.k
        )));
    }
    fit_from(train, val, config, Some((model, stats)))
}

/// Row segments `(record, rows)` making up one mini-batch.
type BatchPlan = Vec<Vec<(usize, Range<usize>)>>;

/// Concatenates the records in order and cuts every `batch_vectors` rows;
/// the short tail batch is kept.
fn plan_batches(train: &[EmbeddingBatch], batch_vectors: usize) -> BatchPlan {
    let mut plan = Vec::new();
    let mut current = Vec::new();
    let mut filled = 0;
    for (r, rec) in train.iter().enumerate() {
        let mut start = 0;
        while start < rec.len() {
            let take = (batch_vectors - filled).min(rec.len() - start);
            current.push((r, start..start + take));
            filled += take;
            start += take;
            if filled == batch_vectors {
                plan.push(std::mem::take(&mut current));
                filled = 0;
            }
        }
    }
    if !current.is_empty() {
        plan.push(current);
    }
    plan
}

fn materialize(train: &[EmbeddingBatch], segments: &[(usize, Range<usize>)]) -> Result<EmbeddingBatch> {
    if let [(r, rows)] = segments {
        if rows.start == 0 && rows.end == train[*r].len() {
            return Ok(train[*r].clone());
        }
    }
    let parts: Vec<_> = segments
        .iter()
        .map(|(r, rows)| train[*r].slice_rows(rows.start, rows.end))
        .collect();
    EmbeddingBatch::concat(&parts)
}

fn check_shards(train: &[EmbeddingBatch], val: &[EmbeddingBatch]) -> Result<(usize, bool)> {
    let first = train.first().ok_or(Error::Empty("no training data"))?;
    let (d, normalized) = (first.dim(), first.is_normalized());
    for b in train.iter().chain(val) {
        if b.dim() != d {
            return Err(Error::dims(d, b.dim()));
        }
        if b.is_normalized() != normalized {
            return Err(Error::invalid(
                "training and validation shards disagree on normalization",
            ));
        }
    }
    if train.iter().all(EmbeddingBatch::is_empty) {
        return Err(Error::Empty("no training rows"));
    }
    Ok((d, normalized))
}

fn total_log_likelihood(shards: &[EmbeddingBatch], model: &DpmmModel) -> Result<f64> {
    shards
        .iter()
        .try_fold(0.0, |acc, b| Ok(acc + mixture_log_likelihood(b, model)?))
}

fn count_effective(model: &DpmmModel, t_pi: f64) -> usize {
    model.weights().iter().filter(|&&w| w > t_pi).count()
}

fn fit_from(
    train: &[EmbeddingBatch],
    val: &[EmbeddingBatch],
    config: &FitConfig,
    resume: Option<(DpmmModel, SufficientStats)>,
) -> Result<Fitted> {
    config.validate()?;
    let (d, _) = check_shards(train, val)?;

    let total_rows: usize = train.iter().map(EmbeddingBatch::len).sum();
    let batch_vectors = if config.full_batch_mode {
        total_rows
    } else {
        config.batch_vectors
    };
    let gamma = if config.full_batch_mode { 1.0 } else { config.gamma };
    let plan = plan_batches(train, batch_vectors);

    let (mut model, mut stats) = match resume {
        Some((model, stats)) => {
            if model.dim() != d {
                return Err(Error::dims(model.dim(), d));
            }
            stats.validate()?;
            (model, stats)
        }
        None => {
            let first = materialize(train, &plan[0])?;
            let mut cfg = config.clone();
            cfg.batch_vectors = batch_vectors;
            init_model(&first, &cfg)?
        }
    };

    // Validation falls back to the training shards when none are given.
    let val = if val.is_empty() { train } else { val };

    let mut report = FitReport::default();
    let mut best = (model.clone(), stats.clone());
    let mut best_ll = f64::NEG_INFINITY;
    let mut order: Vec<usize> = (0..plan.len()).collect();
    let mut shuffler = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffler);
        for &b in &order {
            let batch = materialize(train, &plan[b])?;
            let resp = responsibilities(&batch, &model)?;
            stats = update_stats(&stats, &resp, &batch, gamma)?;
            let alpha = model.alpha();
            let params = m_step(&stats, alpha, model.means(), config)?;
            model.set_parameters(params.means, params.vars, params.sticks);
            if !config.full_batch_mode {
                model.set_alpha(update_alpha(&stats, alpha, config)?);
            }
        }
        let seconds = started.elapsed().as_secs_f64();
        let ll = total_log_likelihood(val, &model)?;
        let effective = count_effective(&model, config.t_pi);
        info!(
            "epoch {epoch}: val log-likelihood {ll:.6}, {effective} effective components, alpha {:.4}, {seconds:.3}s",
            model.alpha()
        );
        report.val_log_likelihood.push(ll);
        report.effective_per_epoch.push(effective);
        report.epoch_seconds.push(seconds);
        if ll > best_ll || report.best_epoch.is_none() {
            debug!("epoch {epoch} is the new best");
            best_ll = ll;
            best = (model.clone(), stats.clone());
            report.best_epoch = Some(epoch);
        }
    }

    let (model, stats) = if report.best_epoch.is_some() {
        best
    } else {
        (model, stats)
    };
    report.effective_components = count_effective(&model, config.t_pi);
    Ok(Fitted { model, stats, report })
}
