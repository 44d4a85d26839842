//! Glue between annotation outputs and the label, risk and evaluation
//! modules: grouping annotators by method, building histograms, curves and
//! risk inputs from label lists.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dataset::{ClassScheme, Dataset};
use crate::eval::{learning_curve, ordered_labels, CurvePoint, EvalError, EvalProtocol, LearningCurve, OrderedLabels};
use crate::labels::{as_label_map, label_histogram, merge_majority, HistogramGroup, LabelError, LabelHistogram, LabelMap};
use crate::risk::{assess_condition, GroupScope, MethodRiskInput, RiskCondition, RiskError, RiskReport, TaskRiskInput};
use crate::sampling::Method;
use crate::session::{AnnotationRecord, AnnotationSession, AnnotatorGroup, LabelValue};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error("unknown track {0:?}")]
    UnknownTrack(String),
    #[error("no ground truth for track {0:?}")]
    MissingGroundTruth(String),
    #[error("no annotations for track {0:?}")]
    NoAnnotations(String),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
}

/// One annotator's output for one track and method.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatorLabels {
    pub method: Method,
    pub track: String,
    pub annotator_id: String,
    pub group: AnnotatorGroup,
    pub labels: OrderedLabels,
}

impl AnnotatorLabels {
    pub fn from_session(s: &AnnotationSession) -> Self {
        let cfg = s.config();
        AnnotatorLabels {
            method: cfg.method,
            track: cfg.track.clone(),
            annotator_id: cfg.annotator_id.clone(),
            group: cfg.annotator_group,
            labels: ordered_labels(s),
        }
    }

    pub fn label_map(&self) -> LabelMap {
        self.labels.iter().cloned().collect()
    }

    pub fn histogram(&self, scheme: &ClassScheme) -> Result<LabelHistogram, LabelError> {
        label_histogram(self.labels.iter().map(|(_, v)| v), scheme)
    }
}

/// Splits exported CSV rows into per-annotator label lists, keeping
/// annotation order. Rows are grouped by (track, method, annotator).
pub fn annotators_from_records(records: &[AnnotationRecord]) -> Result<Vec<AnnotatorLabels>, AnalysisError> {
    let mut by_key: BTreeMap<(String, String, String), AnnotatorLabels> = BTreeMap::new();
    let mut sorted: Vec<&AnnotationRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.annotation_order);
    for r in sorted {
        let method: Method = r.method.parse().map_err(|_| AnalysisError::UnknownMethod(r.method.clone()))?;
        let group = r.annotator_group.parse().unwrap_or(AnnotatorGroup::Expert);
        by_key
            .entry((r.track.clone(), r.method.clone(), r.annotator_id.clone()))
            .or_insert_with(|| AnnotatorLabels {
                method,
                track: r.track.clone(),
                annotator_id: r.annotator_id.clone(),
                group,
                labels: Vec::new(),
            })
            .labels
            .push((r.sample_id.clone(), r.value()));
    }
    Ok(by_key.into_values().collect())
}

/// Annotators of one track, optionally restricted to one group, keyed by method.
pub fn by_method<'a>(
    annotators: &'a [AnnotatorLabels],
    track: &str,
    scope: GroupScope,
) -> BTreeMap<Method, Vec<&'a AnnotatorLabels>> {
    let mut out: BTreeMap<Method, Vec<&AnnotatorLabels>> = BTreeMap::new();
    for a in annotators.iter().filter(|a| a.track == track) {
        let keep = match scope {
            GroupScope::All => true,
            GroupScope::Expert => a.group == AnnotatorGroup::Expert,
            GroupScope::NonExpert => a.group == AnnotatorGroup::NonExpert,
        };
        if keep {
            out.entry(a.method).or_default().push(a);
        }
    }
    out
}

/// Class distribution of the ground truth of a track.
pub fn reference_histogram(dataset: &Dataset, track: &str) -> Result<LabelHistogram, AnalysisError> {
    let scheme = dataset.scheme(track).ok_or_else(|| AnalysisError::UnknownTrack(track.into()))?;
    let truth = dataset
        .ground_truth
        .get(track)
        .ok_or_else(|| AnalysisError::MissingGroundTruth(track.into()))?;
    let values: Vec<LabelValue> = truth.values().map(|c| LabelValue::Class(c.clone())).collect();
    Ok(label_histogram(&values, scheme)?)
}

/// Per-method histogram groups, in the order RND, FAFT, 2DV.
pub fn method_histograms(
    scheme: &ClassScheme,
    annotators: &[AnnotatorLabels],
    scope: GroupScope,
) -> Result<Vec<HistogramGroup>, AnalysisError> {
    let grouped = by_method(annotators, &scheme.track, scope);
    let mut out = Vec::new();
    for m in Method::ALL {
        let Some(list) = grouped.get(&m) else { continue };
        out.push(HistogramGroup {
            name: m.as_str().to_string(),
            annotators: list.iter().map(|a| a.annotator_id.clone()).collect(),
            histograms: list.iter().map(|a| a.histogram(scheme)).collect::<Result<_, _>>()?,
        });
    }
    Ok(out)
}

/// Learning curve of one method's annotators: merged by majority vote when
/// `merge` is set, otherwise the pointwise mean of per-annotator curves.
pub fn method_curve(
    dataset: &Dataset,
    track: &str,
    annotators: &[&AnnotatorLabels],
    protocol: &EvalProtocol,
    merge: bool,
) -> Result<LearningCurve, AnalysisError> {
    if annotators.is_empty() {
        return Err(AnalysisError::NoAnnotations(track.into()));
    }
    if merge {
        let lists: Vec<OrderedLabels> = annotators.iter().map(|a| a.labels.clone()).collect();
        return Ok(learning_curve(dataset, track, &lists, protocol)?);
    }
    let curves = annotators
        .iter()
        .map(|a| learning_curve(dataset, track, std::slice::from_ref(&a.labels), protocol))
        .collect::<Result<Vec<_>, _>>()?;
    let points = protocol
        .checkpoints
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let scores: Vec<f64> = curves.iter().map(|c| c.points[i].mean).collect();
            CurvePoint {
                n_labels: n,
                mean: scores.iter().sum::<f64>() / scores.len() as f64,
                scores,
            }
        })
        .collect();
    Ok(LearningCurve { points })
}

/// Majority-vote merge of several annotators' complete label lists.
pub fn merged_histogram(
    scheme: &ClassScheme,
    annotators: &[&AnnotatorLabels],
    seed: u64,
) -> Result<LabelHistogram, AnalysisError> {
    let maps: Vec<LabelMap> = annotators.iter().map(|a| a.label_map()).collect();
    let merged = as_label_map(&merge_majority(&maps, seed));
    Ok(label_histogram(merged.values(), scheme)?)
}

/// Builds the risk inputs of one track from annotation outputs.
///
/// With one annotator per method, performance is each annotator's mean score
/// over the checkpoints and coverage is checked per annotator. With several,
/// performance is the merged curve and coverage uses the merged labels.
pub fn task_risk_input(
    dataset: &Dataset,
    track: &str,
    annotators: &[AnnotatorLabels],
    scope: GroupScope,
    protocol: &EvalProtocol,
) -> Result<TaskRiskInput, AnalysisError> {
    let scheme = dataset.scheme(track).ok_or_else(|| AnalysisError::UnknownTrack(track.into()))?;
    let reference = reference_histogram(dataset, track)?;
    let grouped = by_method(annotators, track, scope);
    if grouped.is_empty() {
        return Err(AnalysisError::NoAnnotations(track.into()));
    }
    let mut methods = BTreeMap::new();
    for (m, list) in grouped {
        let hists = list.iter().map(|a| a.histogram(scheme)).collect::<Result<Vec<_>, _>>()?;
        let input = if list.len() == 1 {
            let curve = method_curve(dataset, track, &list, protocol, false)?;
            let mean = curve.points.iter().map(|p| p.mean).sum::<f64>() / curve.points.len() as f64;
            MethodRiskInput {
                performance: vec![mean],
                coverage: hists.clone(),
                annotators: hists,
            }
        } else {
            let curve = method_curve(dataset, track, &list, protocol, true)?;
            MethodRiskInput {
                performance: curve.points.iter().map(|p| p.mean).collect(),
                coverage: vec![merged_histogram(scheme, &list, protocol.seed)?],
                annotators: hists,
            }
        };
        methods.insert(m, input);
    }
    Ok(TaskRiskInput {
        task: track.to_string(),
        reference,
        methods,
    })
}

/// Risk report for one condition over one or more tracks.
pub fn risk_from_annotations(
    dataset: &Dataset,
    task: &str,
    tracks: &[&str],
    annotators: &[AnnotatorLabels],
    scope: GroupScope,
    protocol: &EvalProtocol,
    rare_threshold: f64,
) -> Result<RiskReport, AnalysisError> {
    let inputs = tracks
        .iter()
        .map(|t| task_risk_input(dataset, t, annotators, scope, protocol))
        .collect::<Result<Vec<_>, _>>()?;
    let n = inputs
        .iter()
        .flat_map(|t| t.methods.values().map(|m| m.annotators.len()))
        .max()
        .unwrap_or(0);
    let condition = RiskCondition::new(task, scope, n);
    Ok(assess_condition(&condition, &inputs, rare_threshold)?)
}
