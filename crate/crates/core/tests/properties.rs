use dpmm_anomaly::dataio::{encode_checkpoint, Checkpoint};
use dpmm_anomaly::*;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn finite(range: f64) -> impl Strategy<Value = f64> {
    -range..range
}

fn matrix(rows: usize, cols: usize, range: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(finite(range), rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

/// A model with `k` components in `d` dimensions plus a batch of `n` rows.
fn model_and_batch() -> impl Strategy<Value = (DpmmModel, Array2<f64>)> {
    (1usize..8, 1usize..6, 1usize..30).prop_flat_map(|(k, d, n)| {
        (
            matrix(k, d, 5.0),
            prop::collection::vec(0.05f64..3.0, k * d),
            prop::collection::vec(0.05f64..0.95, k),
            matrix(n, d, 10.0),
        )
            .prop_map(move |(means, vars, mut sticks, y)| {
                sticks[k - 1] = 1.0;
                let vars = Array2::from_shape_vec((k, d), vars).unwrap();
                let model = DpmmModel::new(means, vars, Array1::from(sticks), 1.0, false).unwrap();
                (model, y)
            })
    })
}

fn labeled(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    n.prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
    .prop_map(|(s, mut l)| {
        l[0] = true;
        l[1] = false;
        (s, l)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn score_ranges((model, y) in model_and_batch()) {
        let batch = EmbeddingBatch::new(y);
        for s in anomaly_scores(&batch, &model, ScoreMethod::Cosine, 1e-6).unwrap() {
            prop_assert!((0.0..=2.0 + 1e-12).contains(&s));
        }
        for s in anomaly_scores(&batch, &model, ScoreMethod::Euclidean, 1e-6).unwrap() {
            prop_assert!(s >= 0.0);
        }
    }

    #[test]
    fn cosine_assignment_ignores_scale((model, y) in model_and_batch(), c in prop::sample::select(vec![0.1, 3.0, 1000.0])) {
        let base = component_assignment(&EmbeddingBatch::new(y.clone()), &model, ScoreMethod::Cosine, 1e-6).unwrap();
        let scaled = component_assignment(&EmbeddingBatch::new(&y * c), &model, ScoreMethod::Cosine, 1e-6).unwrap();
        prop_assert_eq!(base, scaled);
    }

    #[test]
    fn auroc_invariant_under_increasing_maps((s, l) in labeled(2..200), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let base = auroc(&LabeledScores::new(&s, &l).unwrap()).unwrap();
        let affine: Vec<f64> = s.iter().map(|v| a * v + b).collect();
        let exp: Vec<f64> = s.iter().map(|v| (v / 10.0).exp()).collect();
        prop_assert!((auroc(&LabeledScores::new(&affine, &l).unwrap()).unwrap() - base).abs() <= 1e-12);
        prop_assert!((auroc(&LabeledScores::new(&exp, &l).unwrap()).unwrap() - base).abs() <= 1e-12);
    }

    #[test]
    fn auroc_of_negated_scores_is_complement((s, l) in labeled(2..200)) {
        let mut distinct = s.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        prop_assume!(distinct.len() == s.len());
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let sum = auroc(&LabeledScores::new(&s, &l).unwrap()).unwrap()
            + auroc(&LabeledScores::new(&neg, &l).unwrap()).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn aupr_within_unit_interval((s, l) in labeled(2..400)) {
        let ap = aupr(&LabeledScores::new(&s, &l).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn dice_is_symmetric(a in prop::collection::vec(any::<bool>(), 1..100), b in prop::collection::vec(any::<bool>(), 1..100)) {
        let n = a.len().min(b.len());
        let a = Array2::from_shape_vec((1, n), a[..n].to_vec()).unwrap();
        let b = Array2::from_shape_vec((1, n), b[..n].to_vec()).unwrap();
        prop_assert_eq!(dice(a.view(), b.view()).unwrap(), dice(b.view(), a.view()).unwrap());
    }

    #[test]
    fn p_value_bounded_and_monotone(
        diffs in prop::collection::vec(-1.0f64..1.0, 2..40),
        bump in 0.0f64..2.0,
        at in any::<prop::sample::Index>(),
        seed in any::<u64>(),
    ) {
        // Orient so the observed mean is non-negative; raising any one
        // difference then raises |T| by at least as much as any |T*|.
        let sign = if diffs.iter().sum::<f64>() >= 0.0 { 1.0 } else { -1.0 };
        let a: Vec<f64> = diffs.iter().map(|d| sign * d).collect();
        let zeros = vec![0.0; a.len()];
        let run = |a: Vec<f64>| paired_permutation_test(&PairedImageScores {
            method_a: a,
            method_b: zeros.clone(),
            n_perm: 200,
            seed,
        }).unwrap();
        let base = run(a.clone());
        let mut bumped = a;
        let i = at.index(bumped.len());
        bumped[i] += bump;
        let higher = run(bumped);
        prop_assert!(base.p_value > 0.0 && base.p_value <= 1.0);
        prop_assert!(higher.p_value <= base.p_value);
    }
}

fn blob_data(seed: u64) -> EmbeddingBatch {
    let spec = SyntheticSpec {
        true_means: Array2::from_shape_fn((2, 3), |(k, j)| (k * 4 + j) as f64),
        true_vars: Array2::from_elem((2, 3), 0.2),
        true_weights: Array1::from(vec![0.6, 0.4]),
        count: 1500,
        seed,
    };
    sample_synthetic(&spec).unwrap().0
}

#[test]
fn fit_is_bitwise_deterministic() {
    let data = [blob_data(1)];
    let cfg = FitConfig {
        k: 12,
        epochs: 4,
        batch_vectors: 400,
        seed: 9,
        ..FitConfig::default()
    };
    let encode = |f: Fitted| {
        encode_checkpoint(&Checkpoint {
            model: f.model,
            stats: Some(f.stats),
        })
        .unwrap()
    };
    let first = encode(fit(&data, &[], &cfg).unwrap());
    let second = encode(fit(&data, &[], &cfg).unwrap());
    assert_eq!(first, second);
}

#[test]
fn variances_respect_floor_every_epoch() {
    // Exact duplicates drive some variances to zero before the floor.
    let mut rows = blob_data(2).into_data();
    for i in 0..200 {
        let copy = rows.row(0).to_owned();
        rows.row_mut(i).assign(&copy);
    }
    let data = [EmbeddingBatch::new(rows)];
    for epochs in 1..=5 {
        let cfg = FitConfig {
            k: 10,
            epochs,
            batch_vectors: 300,
            seed: 3,
            var_floor: 1e-4,
            ..FitConfig::default()
        };
        let f = fit(&data, &[], &cfg).unwrap();
        assert!(f.model.vars().iter().all(|&v| v >= 1e-4), "epoch {epochs}");
    }
}
