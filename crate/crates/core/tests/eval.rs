mod common;

use annoselect::dataset::FeatureMatrix;
use annoselect::eval::{
    knn_classify, learning_curve, ordered_labels, simulate_annotation, uar, EvalError, EvalProtocol, OrderedLabels,
    RegionBias, TestSet,
};
use annoselect::projection::{Projection2D, Provenance};
use annoselect::sampling::{DistanceMetric, Method};
use annoselect::session::{AnnotatorGroup, LabelValue, SessionConfig};
use common::oracle::knn_brute;
use common::{clustered_dataset, random_matrix, rng, sample_id, TRACK};
use proptest::prelude::*;
use rand::Rng;

fn config(method: Method, budget: usize, seed: u64) -> SessionConfig {
    SessionConfig {
        dataset_name: "synthetic".into(),
        track: TRACK.into(),
        method,
        budget,
        seed,
        annotator_id: format!("sim{seed}"),
        annotator_group: AnnotatorGroup::Expert,
        metric: DistanceMetric::Cosine,
    }
}

#[test]
fn knn_matches_brute_force() {
    let mut r = rng(17);
    for case in 0..60 {
        let n = r.gen_range(10..80);
        let mut m = random_matrix(&mut r, n, 4);
        if case % 3 == 0 {
            // duplicate rows force distance ties
            let mut vals = m.values().to_vec();
            for i in (1..n).step_by(4) {
                vals.copy_within(0..4, i * 4);
            }
            m = FeatureMatrix::new(n, 4, vals);
        }
        let n_classes = r.gen_range(2..5);
        let n_train = r.gen_range(1..n);
        let train: Vec<(usize, usize)> = (0..n_train).map(|i| (i, r.gen_range(0..n_classes))).collect();
        let test: Vec<usize> = (n_train..n).collect();
        let k = r.gen_range(1..9);
        for metric in [DistanceMetric::Cosine, DistanceMetric::Euclidean] {
            let got = knn_classify(&m, &train, &test, k, metric, n_classes).unwrap();
            assert_eq!(got, knn_brute(&m, &train, &test, k, metric, n_classes), "case {case} {metric:?}");
        }
    }
}

#[test]
fn knn_rejects_empty_training() {
    let m = random_matrix(&mut rng(1), 5, 2);
    assert_eq!(knn_classify(&m, &[], &[0], 3, DistanceMetric::Cosine, 2), Err(EvalError::EmptyTrainingSet));
}

#[test]
fn uar_examples() {
    assert_eq!(uar(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
    // constant predictor on a balanced binary task
    assert_eq!(uar(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap(), 0.5);
    // recalls 2/3 and 1/1 over the two present classes; class 2 is absent
    let u = uar(&[0, 0, 1, 1], &[0, 0, 0, 1], 3).unwrap();
    assert!((u - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    assert_eq!(uar(&[], &[], 2), Err(EvalError::EmptyTestSet));
}

proptest! {
    #[test]
    fn uar_is_bounded_and_order_free(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60), rot in 0usize..60) {
        let (p, t): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let u = uar(&p, &t, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&u));
        let mut rotated = pairs.clone();
        rotated.rotate_left(rot % pairs.len());
        let (p2, t2): (Vec<usize>, Vec<usize>) = rotated.into_iter().unzip();
        prop_assert!((uar(&p2, &t2, 4).unwrap() - u).abs() < 1e-12);
    }
}

fn truth_labels(k: usize, ids: impl Iterator<Item = usize>) -> OrderedLabels {
    ids.map(|i| (sample_id(i), LabelValue::Class(format!("c{}", i % k)))).collect()
}

#[test]
fn protocol_defaults_follow_budget() {
    assert_eq!(EvalProtocol::with_budget(360).checkpoints, vec![50, 100, 150, 200, 250, 300, 360]);
    assert_eq!(EvalProtocol::with_budget(120).checkpoints, vec![50, 100, 120]);
    let p = EvalProtocol::with_budget(300);
    assert_eq!((p.checkpoints.last(), p.n_repeats, p.k), (Some(&300), 10, 5));
    let mut bad = p.clone();
    bad.checkpoints = vec![100, 50];
    assert!(matches!(bad.validate(), Err(EvalError::InvalidProtocol(_))));
}

#[test]
fn checkpoint_beyond_labels_is_an_error() {
    let ds = clustered_dataset(200, 3, 4, 4.0, 3);
    let labels = truth_labels(3, 0..40);
    let mut p = EvalProtocol::with_budget(40);
    p.checkpoints = vec![20, 50];
    assert_eq!(
        learning_curve(&ds, TRACK, &[labels], &p),
        Err(EvalError::CheckpointExceedsLabels { checkpoint: 50, available: 40 })
    );
}

#[test]
fn held_out_test_set_excludes_every_annotated_sample() {
    let ds = clustered_dataset(300, 3, 4, 4.0, 3);
    let a = truth_labels(3, 0..60);
    let b = truth_labels(3, 100..160);
    let mut p = EvalProtocol::with_budget(60);
    p.checkpoints = vec![30, 60];
    p.n_repeats = 3;
    let curve = learning_curve(&ds, TRACK, &[a.clone(), b.clone()], &p).unwrap();
    assert_eq!(curve.points.len(), 2);
    assert!(curve.points.iter().all(|pt| pt.scores.len() == 3));
    assert!(curve.points[1].mean > 0.9, "well separated clusters: {}", curve.points[1].mean);

    // an explicit test set overlapping the training labels is refused
    p.test_set = TestSet::Explicit(vec![sample_id(5), sample_id(200)]);
    assert_eq!(learning_curve(&ds, TRACK, std::slice::from_ref(&a), &p), Err(EvalError::TestSetLeak(sample_id(5))));
    p.test_set = TestSet::Explicit(vec![sample_id(200), sample_id(201)]);
    assert!(learning_curve(&ds, TRACK, &[a], &p).is_ok());
}

#[test]
fn simulation_is_deterministic() {
    let ds = clustered_dataset(150, 3, 4, 3.0, 8);
    for m in Method::ALL {
        let a = simulate_annotation(&ds, config(m, 30, 4), 0.2, None).unwrap();
        let b = simulate_annotation(&ds, config(m, 30, 4), 0.2, None).unwrap();
        assert_eq!(a.export_csv(), b.export_csv(), "{m}");
        assert_eq!(a.labeled_count(), 30);
        let c = simulate_annotation(&ds, config(m, 30, 5), 0.2, None).unwrap();
        assert_ne!(ordered_labels(&a), ordered_labels(&c), "{m}");
    }
}

fn mismatches(labels: &OrderedLabels, k: usize) -> usize {
    labels
        .iter()
        .filter(|(id, v)| {
            let i: usize = id[3..].parse().unwrap();
            v.class() != Some(format!("c{}", i % k).as_str())
        })
        .count()
}

#[test]
fn simulation_noise_rate() {
    let ds = clustered_dataset(3000, 3, 4, 3.0, 8);
    let clean = simulate_annotation(&ds, config(Method::Random, 500, 1), 0.0, None).unwrap();
    assert_eq!(mismatches(&ordered_labels(&clean), 3), 0);
    let all = simulate_annotation(&ds, config(Method::Random, 500, 1), 1.0, None).unwrap();
    assert_eq!(mismatches(&ordered_labels(&all), 3), 500);
    let noisy = simulate_annotation(&ds, config(Method::Random, 2000, 2), 0.3, None).unwrap();
    let rate = mismatches(&ordered_labels(&noisy), 3) as f64 / 2000.0;
    let sigma = (0.3f64 * 0.7 / 2000.0).sqrt();
    assert!((rate - 0.3).abs() < 4.0 * sigma, "rate {rate}");
    assert!(matches!(
        simulate_annotation(&ds, config(Method::Random, 5, 1), 1.5, None),
        Err(EvalError::InvalidSimulation(_))
    ));
}

#[test]
fn region_bias_fills_the_disc_first() {
    let n = 100;
    let coords: Vec<[f64; 2]> = (0..n).map(|i| [i as f64, 0.0]).collect();
    let proj = Projection2D {
        name: "line".into(),
        coords,
        provenance: Provenance::Imported { source: "test".into() },
    };
    let ds = clustered_dataset(n, 3, 4, 3.0, 1);
    let bias = RegionBias {
        projection: &proj,
        center: [10.0, 0.0],
        radius: 3.0,
    };
    let s = simulate_annotation(&ds, config(Method::TwoDv, 11, 6), 0.0, Some(bias)).unwrap();
    let picked: Vec<usize> = ordered_labels(&s).iter().map(|(id, _)| id[3..].parse().unwrap()).collect();
    let mut first: Vec<usize> = picked[..7].to_vec();
    first.sort_unstable();
    assert_eq!(first, (7..=13).collect::<Vec<_>>());
    // then nearest to the center, lower index first on ties
    assert_eq!(&picked[7..], &[6, 14, 5, 15]);
}

#[test]
fn merged_curve_uses_majority_labels() {
    let ds = clustered_dataset(300, 3, 4, 4.0, 3);
    let good = truth_labels(3, 0..60);
    let bad: OrderedLabels = good
        .iter()
        .map(|(id, _)| (id.clone(), LabelValue::Class("c0".into())))
        .collect();
    let mut p = EvalProtocol::with_budget(60);
    p.checkpoints = vec![60];
    p.n_repeats = 2;
    let merged = learning_curve(&ds, TRACK, &[good.clone(), good.clone(), bad.clone()], &p).unwrap();
    let alone = learning_curve(&ds, TRACK, &[good], &p).unwrap();
    assert_eq!(merged.points[0].mean, alone.points[0].mean);
    let worse = learning_curve(&ds, TRACK, &[bad], &p).unwrap();
    assert!(worse.points[0].mean < 0.4);
}
