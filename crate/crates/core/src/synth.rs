//! Seeded draws from a known diagonal-Gaussian mixture, used as ground truth
//! for recovery tests and the synthetic CLI pipeline.

use ndarray::{Array1, Array2};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mixture::EmbeddingBatch;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub true_means: Array2<f64>,
    pub true_vars: Array2<f64>,
    pub true_weights: Array1<f64>,
    pub count: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("count must be positive"));
        }
        let m = self.true_means.nrows();
        if m == 0 {
            return Err(Error::Empty("synthetic mixture has no components"));
        }
        if self.true_vars.dim() != self.true_means.dim() {
            return Err(Error::invalid("true_vars shape differs from true_means"));
        }
        if self.true_weights.len() != m {
            return Err(Error::dims(m, self.true_weights.len()));
        }
        if self.true_vars.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("true variances must be positive"));
        }
        if self.true_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("true weights must be non-negative"));
        }
        let total = self.true_weights.sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("true weights sum to {total}, expected 1")));
        }
        Ok(())
    }
}

/// Draws `count` points and their generating component indices.
pub fn sample_synthetic(spec: &SyntheticSpec) -> Result<(EmbeddingBatch, Vec<usize>)> {
    spec.validate()?;
    let d = spec.true_means.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let picker = WeightedIndex::new(spec.true_weights.iter().copied()).map_err(|e| Error::invalid(e.to_string()))?;
    let stds = spec.true_vars.mapv(f64::sqrt);

    let mut data = Array2::<f64>::zeros((spec.count, d));
    let mut labels = Vec::with_capacity(spec.count);
    for mut row in data.outer_iter_mut() {
        let k = picker.sample(&mut rng);
        labels.push(k);
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            row[j] = spec.true_means[[k, j]] + stds[[k, j]] * z;
        }
    }
    Ok((EmbeddingBatch::new(data), labels))
}
