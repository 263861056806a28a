//! Pixel-level ranking metrics, Dice overlap and a paired sign-flip
//! permutation test.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Scores with binary ground truth (`true` = anomalous).
#[derive(Debug, Clone, Copy)]
pub struct LabeledScores<'a> {
    pub scores: &'a [f64],
    pub labels: &'a [bool],
}

impl<'a> LabeledScores<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [bool]) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::dims(scores.len(), labels.len()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::invalid("scores contain NaN"));
        }
        Ok(Self { scores, labels })
    }

    fn class_counts(&self) -> (u64, u64) {
        let pos = self.labels.iter().filter(|&&l| l).count() as u64;
        (pos, self.labels.len() as u64 - pos)
    }

    /// Indices sorted by descending score.
    fn descending(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_unstable_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        order
    }

    /// Walks blocks of tied scores from the highest down, yielding
    /// `(positives, negatives)` per block.
    fn tie_blocks(&self) -> Vec<(u64, u64)> {
        let order = self.descending();
        let mut blocks = Vec::new();
        let mut i = 0;
        while i < order.len() {
            let s = self.scores[order[i]];
            let (mut p, mut q) = (0, 0);
            while i < order.len() && self.scores[order[i]] == s {
                if self.labels[order[i]] {
                    p += 1;
                } else {
                    q += 1;
                }
                i += 1;
            }
            blocks.push((p, q));
        }
        blocks
    }
}

/// Area under the ROC curve as the Mann–Whitney statistic
/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`.
pub fn auroc(data: &LabeledScores) -> Result<f64> {
    let (pos, neg) = data.class_counts();
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUROC needs both anomalous and normal samples"));
    }
    // Twice the number of correctly ordered pairs, ties counting one.
    let mut doubled: u128 = 0;
    let mut neg_below = neg as u128;
    for (p, q) in data.tie_blocks() {
        neg_below -= q as u128;
        doubled += 2 * p as u128 * neg_below + p as u128 * q as u128;
    }
    Ok(doubled as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Average precision: `Σ precision(t) · Δrecall(t)` over distinct
/// thresholds, tied scores entering as one block.
pub fn aupr(data: &LabeledScores) -> Result<f64> {
    let (pos, _) = data.class_counts();
    if pos == 0 {
        return Err(Error::invalid("AUPR needs at least one anomalous sample"));
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    // Dividing once at the end keeps a perfect ranking at exactly 1.
    let mut weighted = 0.0;
    for (p, q) in data.tie_blocks() {
        tp += p;
        fp += q;
        if p > 0 {
            weighted += tp as f64 / (tp + fp) as f64 * p as f64;
        }
    }
    Ok(weighted / pos as f64)
}

/// Running intersection and set sizes for Dice pooled over many masks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DiceCounts {
    pub intersection: u64,
    pub predicted: u64,
    pub truth: u64,
}

impl DiceCounts {
    pub fn add(&mut self, pred: ArrayView2<bool>, gt: ArrayView2<bool>) -> Result<()> {
        if pred.dim() != gt.dim() {
            return Err(Error::invalid(format!(
                "mask shapes differ: {:?} vs {:?}",
                pred.dim(),
                gt.dim()
            )));
        }
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            self.intersection += (p && g) as u64;
            self.predicted += p as u64;
            self.truth += g as u64;
        }
        Ok(())
    }

    /// `2|P ∧ G| / (|P| + |G|)`, or 1 when both are empty.
    pub fn score(&self) -> f64 {
        let denom = self.predicted + self.truth;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / denom as f64
        }
    }
}

pub fn dice(pred: ArrayView2<bool>, gt: ArrayView2<bool>) -> Result<f64> {
    let mut counts = DiceCounts::default();
    counts.add(pred, gt)?;
    Ok(counts.score())
}

/// Per-image metric values of two methods on the same images.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedImageScores {
    pub method_a: Vec<f64>,
    pub method_b: Vec<f64>,
    pub n_perm: usize,
    pub seed: u64,
}

/// Outcome of [`paired_permutation_test`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationResult {
    /// Mean of `a_i − b_i`.
    pub observed: f64,
    /// Two-sided p-value `(1 + #{|T*| ≥ |T|}) / (1 + n_perm)`.
    pub p_value: f64,
}

/// Random sign pattern for replica `r`. Each replica owns a ChaCha stream,
/// so the draws do not depend on how replicas are scheduled.
fn replica_signs(seed: u64, replica: u64, n: usize) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    let mut signs = Vec::with_capacity(n);
    while signs.len() < n {
        let bits: u64 = rng.random();
        let take = (n - signs.len()).min(64);
        signs.extend((0..take).map(|b| bits >> b & 1 == 1));
    }
    signs
}

/// Paired test on the mean difference with independent sign flips.
pub fn paired_permutation_test(data: &PairedImageScores) -> Result<PermutationResult> {
    let n = data.method_a.len();
    if n != data.method_b.len() {
        return Err(Error::dims(n, data.method_b.len()));
    }
    if n < 2 {
        return Err(Error::invalid("permutation test needs at least two pairs"));
    }
    if data.n_perm == 0 {
        return Err(Error::invalid("n_perm must be positive"));
    }
    let diffs: Vec<f64> = data.method_a.iter().zip(&data.method_b).map(|(a, b)| a - b).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("paired scores must be finite"));
    }
    let mean = |signs: Option<&[bool]>| -> f64 {
        let total: f64 = match signs {
            None => diffs.iter().sum(),
            Some(s) => diffs.iter().zip(s).map(|(d, &flip)| if flip { -d } else { *d }).sum(),
        };
        total / n as f64
    };
    let observed = mean(None);
    // Relative slack so that sign patterns reproducing |T| up to rounding
    // count as ties.
    let bar = observed.abs() * (1.0 - 1e-12);
    let extreme: usize = (0..data.n_perm as u64)
        .into_par_iter()
        .filter(|&r| mean(Some(&replica_signs(data.seed, r, n))).abs() >= bar)
        .count();
    Ok(PermutationResult {
        observed,
        p_value: (1 + extreme) as f64 / (1 + data.n_perm) as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn labels(bits: &[u8]) -> Vec<bool> {
        bits.iter().map(|&b| b == 1).collect()
    }

    #[test]
    fn auroc_examples() {
        let l = labels(&[0, 0, 1, 1]);
        let s = [0.1, 0.4, 0.35, 0.8];
        assert_eq!(auroc(&LabeledScores::new(&s, &l).unwrap()).unwrap(), 0.75);
        let s = [0.1, 0.2, 0.8, 0.9];
        assert_eq!(auroc(&LabeledScores::new(&s, &l).unwrap()).unwrap(), 1.0);
        let s = [0.5; 4];
        assert_eq!(auroc(&LabeledScores::new(&s, &l).unwrap()).unwrap(), 0.5);
        let one_class = labels(&[1, 1]);
        assert!(auroc(&LabeledScores::new(&[0.1, 0.2], &one_class).unwrap()).is_err());
        assert!(LabeledScores::new(&[0.1], &one_class).is_err());
    }

    #[test]
    fn aupr_examples() {
        let l = labels(&[1, 0]);
        assert_eq!(aupr(&LabeledScores::new(&[0.9, 0.1], &l).unwrap()).unwrap(), 1.0);
        let l = labels(&[0, 1]);
        assert_eq!(aupr(&LabeledScores::new(&[0.9, 0.1], &l).unwrap()).unwrap(), 0.5);
        let l = labels(&[1, 0, 0, 1, 0]);
        assert_eq!(aupr(&LabeledScores::new(&[0.3; 5], &l).unwrap()).unwrap(), 2.0 / 5.0);
        // Many perfectly ranked positives must not round above 1.
        let scores: Vec<f64> = (0..400).map(f64::from).collect();
        let many: Vec<bool> = (0..400).map(|i| i >= 200).collect();
        assert_eq!(aupr(&LabeledScores::new(&scores, &many).unwrap()).unwrap(), 1.0);
        let none = labels(&[0, 0]);
        assert!(aupr(&LabeledScores::new(&[0.1, 0.2], &none).unwrap()).is_err());
    }

    #[test]
    fn dice_examples() {
        let gt = array![[true, true, false, false]];
        assert_eq!(dice(gt.view(), gt.view()).unwrap(), 1.0);
        let disjoint = array![[false, false, true, true]];
        assert_eq!(dice(disjoint.view(), gt.view()).unwrap(), 0.0);
        let superset = array![[true, true, true, true]];
        assert!((dice(superset.view(), gt.view()).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let empty = array![[false, false]];
        assert_eq!(dice(empty.view(), empty.view()).unwrap(), 1.0);
        assert!(dice(empty.view(), gt.view()).is_err());
        assert_eq!(
            dice(superset.view(), gt.view()).unwrap(),
            dice(gt.view(), superset.view()).unwrap()
        );
    }

    #[test]
    fn pooled_dice_counts() {
        let mut c = DiceCounts::default();
        c.add(array![[true, false]].view(), array![[true, true]].view())
            .unwrap();
        c.add(array![[false, false]].view(), array![[false, false]].view())
            .unwrap();
        assert_eq!(
            c,
            DiceCounts {
                intersection: 1,
                predicted: 1,
                truth: 2
            }
        );
        assert!((c.score() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn permutation_identical_inputs() {
        let a = vec![0.3, 0.5, 0.9, 0.1];
        let r = paired_permutation_test(&PairedImageScores {
            method_a: a.clone(),
            method_b: a,
            n_perm: 500,
            seed: 1,
        })
        .unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn permutation_constant_shift() {
        let b: Vec<f64> = (0..30).map(|i| 0.5 + i as f64 / 100.0).collect();
        let a: Vec<f64> = b.iter().map(|x| x + 0.1).collect();
        let data = PairedImageScores {
            method_a: a.clone(),
            method_b: b.clone(),
            n_perm: 10_000,
            seed: 7,
        };
        let r = paired_permutation_test(&data).unwrap();
        assert!(r.p_value <= 0.01);
        assert_eq!(r, paired_permutation_test(&data).unwrap());
        let swapped = paired_permutation_test(&PairedImageScores {
            method_a: b,
            method_b: a,
            ..data
        })
        .unwrap();
        assert_eq!(swapped.p_value, r.p_value);
    }

    #[test]
    fn permutation_errors() {
        let short = PairedImageScores {
            method_a: vec![1.0],
            method_b: vec![0.0],
            n_perm: 10,
            seed: 0,
        };
        assert!(paired_permutation_test(&short).is_err());
        let mismatched = PairedImageScores {
            method_a: vec![1.0, 2.0],
            method_b: vec![0.0],
            n_perm: 10,
            seed: 0,
        };
        assert!(paired_permutation_test(&mismatched).is_err());
    }

    #[test]
    fn replica_streams_are_independent_of_order() {
        let a = replica_signs(3, 17, 100);
        let b = replica_signs(3, 17, 100);
        assert_eq!(a, b);
        assert_ne!(a, replica_signs(3, 18, 100));
    }
}
