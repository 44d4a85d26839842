//! Failure-risk analysis of sampling methods: performance failures, rare-class
//! coverage failures and label-distribution instability, dense-ranked and
//! summed into a combined score per method (lower is safer).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ClassScheme;
use crate::labels::{mean_pairwise_hellinger, LabelError, LabelHistogram};
use crate::sampling::Method;

pub const PERFORMANCE_FAILURE_RATIO: f64 = 0.9;
pub const DEFAULT_RARE_THRESHOLD: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("no input values")]
    EmptyInput,
    #[error("performance value {0} outside [0, 1]")]
    InvalidPerformance(f64),
    #[error("reference distribution has no class below {threshold} and the task is not binary")]
    NoRareClass { threshold: f64 },
    #[error("rank table is missing {0}")]
    IncompleteRankTable(String),
    #[error("metric `mod` is not applicable with {0} annotators")]
    MetricNotApplicable(usize),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("method {method} has no input for task {task:?}")]
    MissingMethod { method: Method, task: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskMetric {
    Cov,
    Mod,
    Dis,
}

impl RiskMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskMetric::Cov => "cov",
            RiskMetric::Mod => "mod",
            RiskMetric::Dis => "dis",
        }
    }
}

impl fmt::Display for RiskMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupScope {
    Expert,
    NonExpert,
    All,
}

impl GroupScope {
    pub fn display_name(self) -> &'static str {
        match self {
            GroupScope::Expert => "Expert",
            GroupScope::NonExpert => "Non-expert",
            GroupScope::All => "All",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RiskCondition {
    pub task: String,
    pub annotator_group: GroupScope,
    pub n_annotators: usize,
    metrics: Vec<RiskMetric>,
}

impl RiskCondition {
    /// All metrics apply, except `mod` with exactly two annotators.
    pub fn new(task: impl Into<String>, annotator_group: GroupScope, n_annotators: usize) -> Self {
        let metrics = if n_annotators == 2 {
            vec![RiskMetric::Cov, RiskMetric::Dis]
        } else {
            vec![RiskMetric::Cov, RiskMetric::Mod, RiskMetric::Dis]
        };
        RiskCondition {
            task: task.into(),
            annotator_group,
            n_annotators,
            metrics,
        }
    }

    pub fn with_metrics(
        task: impl Into<String>,
        annotator_group: GroupScope,
        n_annotators: usize,
        mut metrics: Vec<RiskMetric>,
    ) -> Result<Self, RiskError> {
        if n_annotators == 2 && metrics.contains(&RiskMetric::Mod) {
            return Err(RiskError::MetricNotApplicable(n_annotators));
        }
        metrics.sort();
        metrics.dedup();
        Ok(RiskCondition {
            task: task.into(),
            annotator_group,
            n_annotators,
            metrics,
        })
    }

    pub fn metrics(&self) -> &[RiskMetric] {
        &self.metrics
    }

    pub fn metrics_label(&self) -> String {
        self.metrics.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(", ")
    }
}

/// Counts, per method, the values strictly below 0.9 times the best value in
/// the whole configuration.
pub fn detect_performance_failure(perf_by_method: &BTreeMap<Method, Vec<f64>>) -> Result<BTreeMap<Method, usize>, RiskError> {
    let all: Vec<f64> = perf_by_method.values().flatten().copied().collect();
    if all.is_empty() {
        return Err(RiskError::EmptyInput);
    }
    if let Some(bad) = all.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(RiskError::InvalidPerformance(*bad));
    }
    let best = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = PERFORMANCE_FAILURE_RATIO * best;
    Ok(perf_by_method
        .iter()
        .map(|(m, vals)| (*m, vals.iter().filter(|v| **v < threshold).count()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RareClassOutcome {
    pub rare_classes: Vec<String>,
    pub rarest: String,
    pub failure: bool,
}

/// Rare classes are those under `rare_threshold` in the reference (the single
/// rarest class for binary tasks). Fails when `h` holds strictly less than half
/// the reference proportion of the rarest class.
pub fn detect_rare_class_failure(
    h: &LabelHistogram,
    reference: &LabelHistogram,
    rare_threshold: f64,
) -> Result<RareClassOutcome, RiskError> {
    h.check_same_scheme(reference)?;
    let ids: Vec<&str> = reference.scheme.class_ids().collect();
    let argmin = |set: &[usize]| -> usize {
        *set.iter()
            .min_by(|&&a, &&b| reference.proportions[a].total_cmp(&reference.proportions[b]).then(a.cmp(&b)))
            .expect("non-empty")
    };
    let rare: Vec<usize> = if ids.len() == 2 {
        vec![argmin(&[0, 1])]
    } else {
        let r: Vec<usize> = (0..ids.len()).filter(|&k| reference.proportions[k] < rare_threshold).collect();
        if r.is_empty() {
            return Err(RiskError::NoRareClass {
                threshold: rare_threshold,
            });
        }
        r
    };
    let rarest = argmin(&rare);
    Ok(RareClassOutcome {
        rare_classes: rare.iter().map(|&k| ids[k].to_string()).collect(),
        rarest: ids[rarest].to_string(),
        failure: h.proportions[rarest] < reference.proportions[rarest] / 2.0,
    })
}

/// Mean pairwise Hellinger distance between each method's annotator histograms.
pub fn instability(hists_by_method: &BTreeMap<Method, Vec<LabelHistogram>>) -> Result<BTreeMap<Method, f64>, RiskError> {
    hists_by_method
        .iter()
        .map(|(m, h)| Ok((*m, mean_pairwise_hellinger(h)?)))
        .collect()
}

/// Dense ranking: the best value gets rank 1, exact ties share a rank and each
/// new distinct value adds one.
pub fn dense_rank<K: Ord + Clone>(values: &BTreeMap<K, f64>, lower_is_better: bool) -> BTreeMap<K, usize> {
    let mut distinct: Vec<f64> = values.values().copied().collect();
    distinct.sort_by(|a, b| if lower_is_better { a.total_cmp(b) } else { b.total_cmp(a) });
    distinct.dedup();
    values
        .iter()
        .map(|(k, v)| {
            let rank = distinct.iter().position(|d| d == v).expect("value present") + 1;
            (k.clone(), rank)
        })
        .collect()
}

/// Ranks per `(task, metric)` cell.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RankTable {
    #[serde(serialize_with = "serialize_cells")]
    cells: BTreeMap<(String, RiskMetric), BTreeMap<Method, usize>>,
}

fn serialize_cells<S: serde::Serializer>(
    cells: &BTreeMap<(String, RiskMetric), BTreeMap<Method, usize>>,
    s: S,
) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(cells.len()))?;
    for ((task, metric), ranks) in cells {
        seq.serialize_element(&serde_json::json!({ "task": task, "metric": metric, "ranks": ranks }))?;
    }
    seq.end()
}

impl RankTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, task: &str, metric: RiskMetric, ranks: BTreeMap<Method, usize>) {
        self.cells.insert((task.to_string(), metric), ranks);
    }

    pub fn get(&self, task: &str, metric: RiskMetric) -> Option<&BTreeMap<Method, usize>> {
        self.cells.get(&(task.to_string(), metric))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombinedScores {
    pub scores: BTreeMap<Method, f64>,
    pub ordering: String,
}

/// Sums each method's ranks over every metric of the condition and every task.
pub fn combined_risk_score(
    condition: &RiskCondition,
    tasks: &[&str],
    methods: &[Method],
    table: &RankTable,
) -> Result<CombinedScores, RiskError> {
    if tasks.is_empty() || methods.is_empty() {
        return Err(RiskError::IncompleteRankTable("tasks or methods".into()));
    }
    let mut scores: BTreeMap<Method, f64> = methods.iter().map(|m| (*m, 0.0)).collect();
    for task in tasks {
        for metric in condition.metrics() {
            let cell = table
                .get(task, *metric)
                .ok_or_else(|| RiskError::IncompleteRankTable(format!("{task}/{metric}")))?;
            for m in methods {
                let r = cell
                    .get(m)
                    .ok_or_else(|| RiskError::IncompleteRankTable(format!("{task}/{metric}/{m}")))?;
                *scores.get_mut(m).unwrap() += *r as f64;
            }
        }
    }
    let ordering = ordering_string(&scores);
    Ok(CombinedScores { scores, ordering })
}

/// `"FAFT (7.0) = RND (7.0) > 2DV (13.0)"`: ascending score, ties by name.
pub fn ordering_string(scores: &BTreeMap<Method, f64>) -> String {
    let mut v: Vec<(Method, f64)> = scores.iter().map(|(m, s)| (*m, *s)).collect();
    v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.as_str().cmp(b.0.as_str())));
    let mut out = String::new();
    for (i, (m, s)) in v.iter().enumerate() {
        if i > 0 {
            out.push_str(if *s == v[i - 1].1 { " = " } else { " > " });
        }
        out.push_str(&format!("{m} ({s:.1})"));
    }
    out
}

/// Raw inputs of one method for one classification task.
#[derive(Debug, Clone, Default)]
pub struct MethodRiskInput {
    /// Downstream scores; per-annotator means in single-annotator conditions.
    pub performance: Vec<f64>,
    /// Histograms checked for rare-class coverage; one per annotator in
    /// single-annotator conditions, the merged histogram otherwise.
    pub coverage: Vec<LabelHistogram>,
    /// Annotator histograms whose spread measures instability.
    pub annotators: Vec<LabelHistogram>,
}

#[derive(Debug, Clone)]
pub struct TaskRiskInput {
    pub task: String,
    pub reference: LabelHistogram,
    pub methods: BTreeMap<Method, MethodRiskInput>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskReport {
    pub condition: RiskCondition,
    /// Raw value per `(task, metric)` and method: failure counts for cov/mod,
    /// mean pairwise Hellinger for dis.
    pub raw: Vec<RawMetric>,
    pub ranks: RankTable,
    pub scores: BTreeMap<Method, f64>,
    pub ordering: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawMetric {
    pub task: String,
    pub metric: RiskMetric,
    pub values: BTreeMap<Method, f64>,
}

/// Runs every applicable metric on every task and sums the dense ranks.
pub fn assess_condition(
    condition: &RiskCondition,
    tasks: &[TaskRiskInput],
    rare_threshold: f64,
) -> Result<RiskReport, RiskError> {
    let methods: Vec<Method> = tasks
        .first()
        .map(|t| t.methods.keys().copied().collect())
        .ok_or(RiskError::EmptyInput)?;
    let mut table = RankTable::new();
    let mut raw = Vec::new();
    for t in tasks {
        for m in &methods {
            if !t.methods.contains_key(m) {
                return Err(RiskError::MissingMethod {
                    method: *m,
                    task: t.task.clone(),
                });
            }
        }
        for metric in condition.metrics() {
            let values: BTreeMap<Method, f64> = match metric {
                RiskMetric::Cov => t
                    .methods
                    .iter()
                    .map(|(m, inp)| {
                        let mut fails = 0usize;
                        for h in &inp.coverage {
                            if detect_rare_class_failure(h, &t.reference, rare_threshold)?.failure {
                                fails += 1;
                            }
                        }
                        Ok((*m, fails as f64))
                    })
                    .collect::<Result<_, RiskError>>()?,
                RiskMetric::Mod => {
                    let perf: BTreeMap<Method, Vec<f64>> =
                        t.methods.iter().map(|(m, inp)| (*m, inp.performance.clone())).collect();
                    detect_performance_failure(&perf)?
                        .into_iter()
                        .map(|(m, c)| (m, c as f64))
                        .collect()
                }
                RiskMetric::Dis => {
                    let hists: BTreeMap<Method, Vec<LabelHistogram>> =
                        t.methods.iter().map(|(m, inp)| (*m, inp.annotators.clone())).collect();
                    instability(&hists)?
                }
            };
            table.insert(&t.task, *metric, dense_rank(&values, true));
            raw.push(RawMetric {
                task: t.task.clone(),
                metric: *metric,
                values,
            });
        }
    }
    let names: Vec<&str> = tasks.iter().map(|t| t.task.as_str()).collect();
    let combined = combined_risk_score(condition, &names, &methods, &table)?;
    Ok(RiskReport {
        condition: condition.clone(),
        raw,
        ranks: table,
        scores: combined.scores,
        ordering: combined.ordering,
    })
}

const TABLE_HEADERS: [&str; 5] = [
    "Task",
    "Annotator group",
    "# Annotators",
    "Metrics used",
    "Ranked methods (combined risk score)",
];

fn table_row(r: &RiskReport) -> [String; 5] {
    [
        r.condition.task.clone(),
        r.condition.annotator_group.display_name().to_string(),
        r.condition.n_annotators.to_string(),
        r.condition.metrics_label(),
        r.ordering.clone(),
    ]
}

/// Tab-separated rows with the combined-risk table's columns.
pub fn render_tsv(reports: &[RiskReport]) -> String {
    let mut out = TABLE_HEADERS.join("\t");
    out.push('\n');
    for r in reports {
        out.push_str(&table_row(r).join("\t"));
        out.push('\n');
    }
    out
}

/// Space-aligned text table.
pub fn render_table(reports: &[RiskReport]) -> String {
    let rows: Vec<[String; 5]> = reports.iter().map(table_row).collect();
    let mut widths: Vec<usize> = TABLE_HEADERS.iter().map(|h| h.chars().count()).collect();
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let fmt_row = |cells: &[String]| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join(" | ")
            .trim_end()
            .to_string()
    };
    let header: Vec<String> = TABLE_HEADERS.iter().map(|s| s.to_string()).collect();
    let mut out = fmt_row(&header);
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    out.push('\n');
    for r in &rows {
        out.push_str(&fmt_row(r));
        out.push('\n');
    }
    out
}

/// JSON description of risk conditions, as read by `risk-report`.
#[derive(Debug, Clone, Deserialize)]
pub struct RiskSpec {
    #[serde(default = "default_rare_threshold")]
    pub rare_threshold: f64,
    pub conditions: Vec<ConditionSpec>,
}

fn default_rare_threshold() -> f64 {
    DEFAULT_RARE_THRESHOLD
}

#[derive(Debug, Clone, Deserialize)]
pub struct ConditionSpec {
    pub task: String,
    pub annotator_group: GroupScope,
    pub n_annotators: usize,
    #[serde(default)]
    pub metrics: Option<Vec<RiskMetric>>,
    pub tracks: Vec<TrackSpec>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TrackSpec {
    pub track: String,
    pub classes: Vec<String>,
    pub reference: Vec<f64>,
    pub methods: BTreeMap<Method, MethodSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct MethodSpec {
    #[serde(default)]
    pub performance: Vec<f64>,
    #[serde(default)]
    pub coverage: Vec<Vec<f64>>,
    #[serde(default)]
    pub annotators: Vec<Vec<f64>>,
}

impl RiskSpec {
    pub fn evaluate(&self) -> Result<Vec<RiskReport>, RiskError> {
        self.conditions
            .iter()
            .map(|c| {
                let condition = match &c.metrics {
                    Some(m) => RiskCondition::with_metrics(&c.task, c.annotator_group, c.n_annotators, m.clone())?,
                    None => RiskCondition::new(&c.task, c.annotator_group, c.n_annotators),
                };
                let tasks = c.tracks.iter().map(TrackSpec::to_input).collect::<Result<Vec<_>, _>>()?;
                assess_condition(&condition, &tasks, self.rare_threshold)
            })
            .collect()
    }
}

impl TrackSpec {
    fn to_input(&self) -> Result<TaskRiskInput, RiskError> {
        let ids: Vec<&str> = self.classes.iter().map(String::as_str).collect();
        let scheme = ClassScheme::from_ids(&self.track, &ids)
            .map_err(|e| LabelError::InvalidRemap(e.to_string()))?;
        let hist = |p: &Vec<f64>| LabelHistogram::from_proportions(&scheme, p, 0);
        let reference = hist(&self.reference)?;
        let methods = self
            .methods
            .iter()
            .map(|(m, spec)| {
                Ok((
                    *m,
                    MethodRiskInput {
                        performance: spec.performance.clone(),
                        coverage: spec.coverage.iter().map(hist).collect::<Result<_, _>>()?,
                        annotators: spec.annotators.iter().map(hist).collect::<Result<_, _>>()?,
                    },
                ))
            })
            .collect::<Result<_, RiskError>>()?;
        Ok(TaskRiskInput {
            task: self.track.clone(),
            reference,
            methods,
        })
    }
}
