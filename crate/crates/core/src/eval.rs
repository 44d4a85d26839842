//! Downstream evaluation with a k-nearest-neighbour classifier, learning
//! curves over annotation checkpoints, and simulated annotators.
//!
//! The classifier is a fixed, cheap stand-in: the point is to compare sampling
//! strategies under one model, not to reach a particular accuracy. Scores are
//! unweighted average recall (UAR).

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ClassScheme, Dataset, FeatureMatrix};
use crate::labels::{merge_majority, LabelMap};
use crate::projection::Projection2D;
use crate::sampling::{rng_for, DistanceMetric, Method};
use crate::session::{create_session, AnnotationSession, LabelValue, NavAction, SessionConfig, SessionError};

pub const DEFAULT_CHECKPOINTS: [usize; 6] = [50, 100, 150, 200, 250, 300];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("checkpoint {checkpoint} exceeds the {available} labels available")]
    CheckpointExceedsLabels { checkpoint: usize, available: usize },
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error("no ground truth for track {0:?}")]
    MissingGroundTruth(String),
    #[error("unknown track {0:?}")]
    UnknownTrack(String),
    #[error("unknown sample id {0:?}")]
    UnknownSample(String),
    #[error("class {0:?} is not in the scheme")]
    UnknownClass(String),
    #[error("training sample {0:?} leaked into the test set")]
    TestSetLeak(String),
    #[error("invalid simulation: {0}")]
    InvalidSimulation(String),
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// Majority class among the `k` nearest training rows (clamped to the
/// training size). Neighbours at equal distance are taken in ascending global
/// index; class-count ties go to the class listed first in the scheme.
///
/// `train` pairs a global index with a class position in `scheme`.
pub fn knn_classify(
    features: &FeatureMatrix,
    train: &[(usize, usize)],
    test: &[usize],
    k: usize,
    metric: DistanceMetric,
    n_classes: usize,
) -> Result<Vec<usize>, EvalError> {
    knn_by(train, test.len(), k, n_classes, |t, i| {
        metric.distance(features.row(test[t]), features.row(i))
    })
}

/// k-NN core over an arbitrary distance lookup `dist(test_position, train_index)`.
fn knn_by(
    train: &[(usize, usize)],
    n_test: usize,
    k: usize,
    n_classes: usize,
    dist: impl Fn(usize, usize) -> f64,
) -> Result<Vec<usize>, EvalError> {
    if train.is_empty() {
        return Err(EvalError::EmptyTrainingSet);
    }
    let k = k.clamp(1, train.len());
    let mut dists: Vec<(f64, usize, usize)> = Vec::with_capacity(train.len());
    let mut votes = vec![0usize; n_classes];
    Ok((0..n_test)
        .map(|t| {
            dists.clear();
            dists.extend(train.iter().map(|&(i, c)| (dist(t, i), i, c)));
            dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            votes.iter_mut().for_each(|v| *v = 0);
            for &(_, _, c) in &dists[..k] {
                votes[c] += 1;
            }
            let top = *votes.iter().max().unwrap();
            votes.iter().position(|&v| v == top).unwrap()
        })
        .collect())
}

/// Distances from every test row to every annotated row, computed once per
/// curve. Falls back to on-demand evaluation when the table would be large.
struct DistanceTable<'a> {
    features: &'a FeatureMatrix,
    metric: DistanceMetric,
    test: &'a [usize],
    column: Vec<usize>,
    width: usize,
    values: Option<Vec<f64>>,
}

const MAX_TABLE_ENTRIES: usize = 1 << 25;

impl<'a> DistanceTable<'a> {
    fn new(features: &'a FeatureMatrix, metric: DistanceMetric, test: &'a [usize], annotated: &[usize]) -> Self {
        let mut column = vec![usize::MAX; features.n_samples()];
        for (c, &i) in annotated.iter().enumerate() {
            column[i] = c;
        }
        let width = annotated.len();
        let values = (test.len() * width <= MAX_TABLE_ENTRIES).then(|| {
            let mut v = Vec::with_capacity(test.len() * width);
            for &t in test {
                let row = features.row(t);
                v.extend(annotated.iter().map(|&i| metric.distance(row, features.row(i))));
            }
            v
        });
        DistanceTable { features, metric, test, column, width, values }
    }

    fn get(&self, t: usize, i: usize) -> f64 {
        match &self.values {
            Some(v) => v[t * self.width + self.column[i]],
            None => self.metric.distance(self.features.row(self.test[t]), self.features.row(i)),
        }
    }
}

/// Mean per-class recall over the classes present in `truth`.
pub fn uar(predictions: &[usize], truth: &[usize], n_classes: usize) -> Result<f64, EvalError> {
    assert_eq!(predictions.len(), truth.len(), "prediction and truth lengths differ");
    if truth.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut hit = vec![0usize; n_classes];
    let mut total = vec![0usize; n_classes];
    for (p, t) in predictions.iter().zip(truth) {
        total[*t] += 1;
        if p == t {
            hit[*t] += 1;
        }
    }
    let present: Vec<usize> = (0..n_classes).filter(|&c| total[c] > 0).collect();
    Ok(present.iter().map(|&c| hit[c] as f64 / total[c] as f64).sum::<f64>() / present.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSet {
    /// Every sample with ground truth that no annotator labeled.
    HeldOutUnannotated,
    Explicit(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalProtocol {
    pub checkpoints: Vec<usize>,
    pub n_repeats: usize,
    pub k: usize,
    pub metric: DistanceMetric,
    pub test_set: TestSet,
    pub seed: u64,
}

impl EvalProtocol {
    /// Checkpoints 50..300 in steps of 50, then the full budget.
    pub fn with_budget(budget: usize) -> Self {
        let mut checkpoints: Vec<usize> = DEFAULT_CHECKPOINTS.iter().copied().filter(|&c| c < budget).collect();
        checkpoints.push(budget);
        EvalProtocol {
            checkpoints,
            n_repeats: 10,
            k: 5,
            metric: DistanceMetric::Cosine,
            test_set: TestSet::HeldOutUnannotated,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.checkpoints.is_empty() {
            return Err(EvalError::InvalidProtocol("no checkpoints".into()));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) || self.checkpoints[0] == 0 {
            return Err(EvalError::InvalidProtocol("checkpoints must be positive and strictly increasing".into()));
        }
        if self.n_repeats == 0 || self.k == 0 {
            return Err(EvalError::InvalidProtocol("n_repeats and k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub n_labels: usize,
    pub mean: f64,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
}

/// One annotator's labels in annotation order.
pub type OrderedLabels = Vec<(String, LabelValue)>;

pub fn ordered_labels(session: &AnnotationSession) -> OrderedLabels {
    session
        .labels_in_order()
        .into_iter()
        .map(|(i, e)| (session.sample_id(i).unwrap_or_default().to_string(), e.value.clone()))
        .collect()
}

/// Learning curve over one annotator (no merging) or several (first `n` of
/// each, merged by majority vote at every checkpoint). Repeats differ only in
/// the seed of the merge tie-breaks.
pub fn learning_curve(
    dataset: &Dataset,
    track: &str,
    annotators: &[OrderedLabels],
    protocol: &EvalProtocol,
) -> Result<LearningCurve, EvalError> {
    protocol.validate()?;
    if annotators.is_empty() {
        return Err(EvalError::EmptyTrainingSet);
    }
    let scheme = dataset.scheme(track).ok_or_else(|| EvalError::UnknownTrack(track.into()))?;
    let truth = dataset
        .ground_truth
        .get(track)
        .ok_or_else(|| EvalError::MissingGroundTruth(track.into()))?;
    let available = annotators.iter().map(Vec::len).min().unwrap_or(0);
    if let Some(&c) = protocol.checkpoints.iter().find(|&&c| c > available) {
        return Err(EvalError::CheckpointExceedsLabels { checkpoint: c, available });
    }

    let annotated: BTreeSet<&str> = annotators.iter().flatten().map(|(s, _)| s.as_str()).collect();
    let test_ids: Vec<&str> = match &protocol.test_set {
        TestSet::HeldOutUnannotated => truth
            .keys()
            .map(String::as_str)
            .filter(|s| !annotated.contains(s))
            .collect(),
        TestSet::Explicit(ids) => ids.iter().map(String::as_str).collect(),
    };
    let mut test_idx = Vec::with_capacity(test_ids.len());
    let mut test_truth = Vec::with_capacity(test_ids.len());
    for id in &test_ids {
        let gi = dataset.index_of(id).ok_or_else(|| EvalError::UnknownSample(id.to_string()))?;
        let class = truth.get(*id).ok_or_else(|| EvalError::MissingGroundTruth(format!("{track}/{id}")))?;
        test_idx.push(gi);
        test_truth.push(class_pos(scheme, class)?);
    }
    if test_idx.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }

    let test_lookup: BTreeSet<&str> = test_ids.iter().copied().collect();
    let mut annotated_idx = Vec::with_capacity(annotated.len());
    for id in &annotated {
        annotated_idx.push(dataset.index_of(id).ok_or_else(|| EvalError::UnknownSample(id.to_string()))?);
    }
    let table = DistanceTable::new(&dataset.features, protocol.metric, &test_idx, &annotated_idx);
    let mut points = Vec::with_capacity(protocol.checkpoints.len());
    for &n in &protocol.checkpoints {
        let prefixes: Vec<LabelMap> = annotators
            .iter()
            .map(|a| a[..n].iter().cloned().collect())
            .collect();
        let mut scores = Vec::with_capacity(protocol.n_repeats);
        for rep in 0..protocol.n_repeats {
            let merged = merge_majority(&prefixes, protocol.seed.wrapping_add(rep as u64));
            let mut train = Vec::with_capacity(merged.len());
            for (id, class) in &merged {
                if test_lookup.contains(id.as_str()) {
                    return Err(EvalError::TestSetLeak(id.clone()));
                }
                let gi = dataset.index_of(id).ok_or_else(|| EvalError::UnknownSample(id.clone()))?;
                train.push((gi, class_pos(scheme, class)?));
            }
            let pred = knn_by(&train, test_idx.len(), protocol.k, scheme.n_classes(), |t, i| table.get(t, i))?;
            scores.push(uar(&pred, &test_truth, scheme.n_classes())?);
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        points.push(CurvePoint { n_labels: n, mean, scores });
    }
    Ok(LearningCurve { points })
}

fn class_pos(scheme: &ClassScheme, class: &str) -> Result<usize, EvalError> {
    scheme.class_index(class).ok_or_else(|| EvalError::UnknownClass(class.into()))
}

/// Steers simulated 2DV selection toward a disc in one projection.
#[derive(Debug, Clone)]
pub struct RegionBias<'a> {
    pub projection: &'a Projection2D,
    pub center: [f64; 2],
    pub radius: f64,
}

fn sim_clock(step: usize) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + Duration::seconds(step as i64)
}

/// Produces a completed session as an oracle annotator with label noise would.
///
/// RND and FAFT follow their computed order. A 2DV annotator with a region
/// bias picks uniformly among unlabeled points inside the disc and, once the
/// disc is exhausted, the unlabeled point nearest its center; without a bias
/// it picks uniformly among all unlabeled points. Each label is the ground
/// truth with probability `1 - noise_rate`, otherwise a uniformly drawn other
/// class. Samples without ground truth are labeled erroneous.
pub fn simulate_annotation(
    dataset: &Dataset,
    cfg: SessionConfig,
    noise_rate: f64,
    bias: Option<RegionBias<'_>>,
) -> Result<AnnotationSession, EvalError> {
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(EvalError::InvalidSimulation(format!("noise rate {noise_rate} outside [0, 1]")));
    }
    let truth = dataset
        .truth_by_index(&cfg.track)
        .ok_or_else(|| EvalError::MissingGroundTruth(cfg.track.clone()))?;
    if let Some(b) = &bias {
        if b.projection.len() != dataset.len() {
            return Err(EvalError::InvalidSimulation("projection size differs from dataset".into()));
        }
    }
    let scheme = dataset.scheme(&cfg.track).ok_or_else(|| EvalError::UnknownTrack(cfg.track.clone()))?.clone();
    let method = cfg.method;
    let seed = cfg.seed;
    let budget = cfg.budget;
    let mut session = create_session(dataset, cfg)?;

    let mut label_rng = rng_for(seed);
    label_rng.set_stream(1);
    let mut pick_rng = rng_for(seed);
    pick_rng.set_stream(2);

    let noisy_label = |idx: usize, rng: &mut ChaCha8Rng| -> LabelValue {
        let Some(true_class) = truth.get(&idx) else {
            return LabelValue::Erroneous;
        };
        if noise_rate > 0.0 && rng.gen::<f64>() < noise_rate {
            let others: Vec<&str> = scheme.class_ids().filter(|c| c != true_class).collect();
            LabelValue::Class(others[rng.gen_range(0..others.len())].to_string())
        } else {
            LabelValue::Class(true_class.clone())
        }
    };

    let mut unlabeled: BTreeSet<usize> = (0..dataset.len()).collect();
    for step in 0..budget {
        let idx = match method {
            Method::Random | Method::Faft => session.current().expect("guided session has a current sample"),
            Method::TwoDv => {
                let pick = pick_2dv(&unlabeled, bias.as_ref(), &mut pick_rng);
                session.navigate(NavAction::Select(pick))?;
                pick
            }
        };
        unlabeled.remove(&idx);
        let value = noisy_label(idx, &mut label_rng);
        session.assign_label_at(idx, value, sim_clock(step))?;
    }
    Ok(session)
}

fn pick_2dv(unlabeled: &BTreeSet<usize>, bias: Option<&RegionBias<'_>>, rng: &mut ChaCha8Rng) -> usize {
    match bias {
        None => *unlabeled.iter().nth(rng.gen_range(0..unlabeled.len())).unwrap(),
        Some(b) => {
            let d2 = |i: usize| {
                let [x, y] = b.projection.coords[i];
                (x - b.center[0]).powi(2) + (y - b.center[1]).powi(2)
            };
            let r2 = b.radius * b.radius;
            let inside: Vec<usize> = unlabeled.iter().copied().filter(|&i| d2(i) <= r2).collect();
            if inside.is_empty() {
                *unlabeled
                    .iter()
                    .min_by(|&&a, &&c| d2(a).total_cmp(&d2(c)).then(a.cmp(&c)))
                    .unwrap()
            } else {
                inside[rng.gen_range(0..inside.len())]
            }
        }
    }
}

/// Ordered labels keyed by method, as produced by [`crate::session::read_export_csv`].
pub fn group_by_method(records: &[crate::session::AnnotationRecord]) -> BTreeMap<(String, String), OrderedLabels> {
    let mut out: BTreeMap<(String, String), OrderedLabels> = BTreeMap::new();
    for r in records {
        out.entry((r.method.clone(), r.annotator_id.clone()))
            .or_default()
            .push((r.sample_id.clone(), r.value()));
    }
    out
}
