//! Label-distribution analysis: class remapping, histograms with
//! cross-annotator spread, Hellinger divergence and majority merging.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::ClassScheme;
use crate::sampling::rng_for;
use crate::session::LabelValue;

/// `sample_id -> label`
pub type LabelMap = BTreeMap<String, LabelValue>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LabelError {
    #[error("class {0:?} has no mapping in the remap")]
    UnmappedClass(String),
    #[error("invalid remap: {0}")]
    InvalidRemap(String),
    #[error("label {0:?} is not in the scheme")]
    UnknownClass(String),
    #[error("no labels to build a histogram from")]
    EmptyLabelSet,
    #[error("histograms are over different schemes ({0:?} vs {1:?})")]
    SchemeMismatch(String, String),
    #[error("need at least 2 histograms, got {0}")]
    TooFewHistograms(usize),
}

/// Total mapping from one scheme's classes onto another scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRemap {
    pub source: ClassScheme,
    pub target: ClassScheme,
    pub mapping: BTreeMap<String, String>,
}

impl ClassRemap {
    pub fn new(source: ClassScheme, target: ClassScheme, mapping: BTreeMap<String, String>) -> Result<Self, LabelError> {
        for c in source.class_ids() {
            let t = mapping.get(c).ok_or_else(|| LabelError::UnmappedClass(c.to_string()))?;
            if !target.contains(t) {
                return Err(LabelError::InvalidRemap(format!("{c:?} maps to {t:?}, which is not a target class")));
            }
        }
        if let Some(extra) = mapping.keys().find(|k| !source.contains(k)) {
            return Err(LabelError::InvalidRemap(format!("mapping names unknown source class {extra:?}")));
        }
        for t in target.class_ids() {
            if !mapping.values().any(|v| v == t) {
                return Err(LabelError::InvalidRemap(format!("target class {t:?} receives no source class")));
            }
        }
        Ok(ClassRemap { source, target, mapping })
    }

    pub fn identity(scheme: &ClassScheme) -> Self {
        let mapping = scheme.class_ids().map(|c| (c.to_string(), c.to_string())).collect();
        ClassRemap {
            source: scheme.clone(),
            target: scheme.clone(),
            mapping,
        }
    }

    /// Builds the target scheme from `groups` (target id, merged source ids),
    /// keeping the first source class's color and assigning fresh shortcuts.
    pub fn merging(source: &ClassScheme, target_track: &str, groups: &[(&str, &[&str])]) -> Result<Self, LabelError> {
        let ids: Vec<&str> = groups.iter().map(|(t, _)| *t).collect();
        let mut target =
            ClassScheme::from_ids(target_track, &ids).map_err(|e| LabelError::InvalidRemap(e.to_string()))?;
        target.allows_erroneous = source.allows_erroneous;
        let mut mapping = BTreeMap::new();
        for (k, (t, sources)) in groups.iter().enumerate() {
            if let Some(first) = sources.first().and_then(|s| source.class_index(s)) {
                target.classes[k].color = source.classes[first].color.clone();
            }
            for s in *sources {
                mapping.insert(s.to_string(), t.to_string());
            }
        }
        ClassRemap::new(source.clone(), target, mapping)
    }

    pub fn map(&self, class_id: &str) -> Result<&str, LabelError> {
        self.mapping
            .get(class_id)
            .map(String::as_str)
            .ok_or_else(|| LabelError::UnmappedClass(class_id.to_string()))
    }
}

/// Applies the remap pointwise; erroneous entries pass through unchanged.
pub fn remap_labels(labels: &LabelMap, remap: &ClassRemap) -> Result<LabelMap, LabelError> {
    labels
        .iter()
        .map(|(s, v)| {
            let mapped = match v {
                LabelValue::Class(c) => LabelValue::Class(remap.map(c)?.to_string()),
                LabelValue::Erroneous => LabelValue::Erroneous,
            };
            Ok((s.clone(), mapped))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelHistogram {
    #[serde(skip)]
    pub scheme: ClassScheme,
    pub track: String,
    pub proportions: Vec<f64>,
    pub support: usize,
}

impl LabelHistogram {
    /// Histogram from explicit proportions, e.g. a published reference
    /// distribution. Proportions are renormalised to sum to 1.
    pub fn from_proportions(scheme: &ClassScheme, proportions: &[f64], support: usize) -> Result<Self, LabelError> {
        if proportions.len() != scheme.n_classes() {
            return Err(LabelError::SchemeMismatch(
                scheme.track.clone(),
                format!("{} proportions", proportions.len()),
            ));
        }
        let total: f64 = proportions.iter().sum();
        if total.is_nan() || total <= 0.0 || proportions.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(LabelError::EmptyLabelSet);
        }
        let norm = if (total - 1.0).abs() > 1e-12 { total } else { 1.0 };
        Ok(LabelHistogram {
            scheme: scheme.clone(),
            track: scheme.track.clone(),
            proportions: proportions.iter().map(|p| p / norm).collect(),
            support,
        })
    }

    pub fn proportion(&self, class_id: &str) -> Option<f64> {
        self.scheme.class_index(class_id).map(|i| self.proportions[i])
    }

    pub(crate) fn check_same_scheme(&self, other: &LabelHistogram) -> Result<(), LabelError> {
        if self.scheme.track != other.scheme.track || self.scheme.classes.len() != other.scheme.classes.len()
            || self.scheme.class_ids().ne(other.scheme.class_ids())
        {
            return Err(LabelError::SchemeMismatch(self.track.clone(), other.track.clone()));
        }
        Ok(())
    }
}

/// Class proportions over `labels`, skipping erroneous entries.
pub fn label_histogram<'a, I>(labels: I, scheme: &ClassScheme) -> Result<LabelHistogram, LabelError>
where
    I: IntoIterator<Item = &'a LabelValue>,
{
    let mut counts = vec![0usize; scheme.n_classes()];
    for v in labels {
        if let LabelValue::Class(c) = v {
            let i = scheme.class_index(c).ok_or_else(|| LabelError::UnknownClass(c.clone()))?;
            counts[i] += 1;
        }
    }
    let support: usize = counts.iter().sum();
    if support == 0 {
        return Err(LabelError::EmptyLabelSet);
    }
    Ok(LabelHistogram {
        scheme: scheme.clone(),
        track: scheme.track.clone(),
        proportions: counts.iter().map(|&c| c as f64 / support as f64).collect(),
        support,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupStats {
    pub mean: Vec<f64>,
    /// Sample standard deviation (`n - 1` denominator).
    pub sd: Vec<f64>,
}

pub fn histogram_group_stats(hists: &[LabelHistogram]) -> Result<GroupStats, LabelError> {
    if hists.len() < 2 {
        return Err(LabelError::TooFewHistograms(hists.len()));
    }
    for h in &hists[1..] {
        hists[0].check_same_scheme(h)?;
    }
    let n = hists.len() as f64;
    let k = hists[0].proportions.len();
    let mean: Vec<f64> = (0..k).map(|c| hists.iter().map(|h| h.proportions[c]).sum::<f64>() / n).collect();
    let sd = (0..k)
        .map(|c| {
            let ss: f64 = hists.iter().map(|h| (h.proportions[c] - mean[c]).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        })
        .collect();
    Ok(GroupStats { mean, sd })
}

/// `(1/sqrt 2) * || sqrt(p) - sqrt(q) ||_2`, in `[0, 1]`.
pub fn hellinger(p: &LabelHistogram, q: &LabelHistogram) -> Result<f64, LabelError> {
    p.check_same_scheme(q)?;
    Ok(hellinger_raw(&p.proportions, &q.proportions))
}

pub fn hellinger_raw(p: &[f64], q: &[f64]) -> f64 {
    let ss: f64 = p.iter().zip(q).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    (ss.sqrt() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

pub fn mean_pairwise_hellinger(hists: &[LabelHistogram]) -> Result<f64, LabelError> {
    if hists.len() < 2 {
        return Err(LabelError::TooFewHistograms(hists.len()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..hists.len() {
        for j in (i + 1)..hists.len() {
            total += hellinger(&hists[i], &hists[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Merges several annotators' labels. Erroneous votes are dropped; samples
/// with only erroneous votes are left out. A strict majority wins; otherwise
/// one of the classes tied at the top count is drawn with the seeded
/// generator. Samples are visited in id order and tied classes in id order,
/// so the result does not depend on the order of `label_sets`.
pub fn merge_majority(label_sets: &[LabelMap], seed: u64) -> BTreeMap<String, String> {
    let mut votes: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for set in label_sets {
        for (sample, value) in set {
            if let LabelValue::Class(c) = value {
                *votes.entry(sample.as_str()).or_default().entry(c.as_str()).or_default() += 1;
            }
        }
    }
    let mut rng = rng_for(seed);
    votes
        .into_iter()
        .map(|(sample, counts)| {
            let top = *counts.values().max().expect("at least one vote");
            let tied: Vec<&str> = counts.iter().filter(|(_, &n)| n == top).map(|(c, _)| *c).collect();
            let pick = if tied.len() == 1 {
                tied[0]
            } else {
                tied[rng.gen_range(0..tied.len())]
            };
            (sample.to_string(), pick.to_string())
        })
        .collect()
}

/// Wraps merged class labels back into a [`LabelMap`].
pub fn as_label_map(merged: &BTreeMap<String, String>) -> LabelMap {
    merged
        .iter()
        .map(|(s, c)| (s.clone(), LabelValue::Class(c.clone())))
        .collect()
}

/// One group of histograms in a report (reference, or one sampling method).
#[derive(Debug, Clone)]
pub struct HistogramGroup {
    pub name: String,
    pub annotators: Vec<String>,
    pub histograms: Vec<LabelHistogram>,
}

impl HistogramGroup {
    /// Mean and SD; a single histogram reports zero spread.
    pub fn stats(&self) -> Result<GroupStats, LabelError> {
        match self.histograms.len() {
            0 => Err(LabelError::TooFewHistograms(0)),
            1 => Ok(GroupStats {
                mean: self.histograms[0].proportions.clone(),
                sd: vec![0.0; self.histograms[0].proportions.len()],
            }),
            _ => histogram_group_stats(&self.histograms),
        }
    }
}

/// Tab-separated report: `group, class, mean, sd, <annotator>...`.
pub fn histogram_report_tsv(scheme: &ClassScheme, groups: &[HistogramGroup]) -> Result<String, LabelError> {
    let mut out = String::from("group\tclass\tmean\tsd\tper_annotator\n");
    for g in groups {
        let st = g.stats()?;
        for (k, class) in scheme.class_ids().enumerate() {
            let per: Vec<String> = g
                .annotators
                .iter()
                .zip(&g.histograms)
                .map(|(a, h)| format!("{a}={:.6}", h.proportions[k]))
                .collect();
            out.push_str(&format!(
                "{}\t{}\t{:.6}\t{:.6}\t{}\n",
                g.name,
                class,
                st.mean[k],
                st.sd[k],
                per.join(",")
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ab() -> ClassScheme {
        ClassScheme::from_ids("t", &["A", "B"]).unwrap()
    }

    fn hist(p: &[f64]) -> LabelHistogram {
        LabelHistogram::from_proportions(&ClassScheme::from_ids("t", &["A", "B", "C"][..p.len()]).unwrap(), p, 1)
            .unwrap()
    }

    fn lm(pairs: &[(&str, &str)]) -> LabelMap {
        pairs
            .iter()
            .map(|(s, c)| {
                let v = if *c == "!" {
                    LabelValue::Erroneous
                } else {
                    LabelValue::Class(c.to_string())
                };
                (s.to_string(), v)
            })
            .collect()
    }

    #[test]
    fn laterality_merge() {
        let src = ClassScheme::from_ids("movement", &["still", "roll_left", "roll_right"]).unwrap();
        let remap = ClassRemap::merging(&src, "movement", &[("still", &["still"]), ("roll", &["roll_left", "roll_right"])])
            .unwrap();
        let out = remap_labels(&lm(&[("s1", "roll_left"), ("s2", "roll_right"), ("s3", "!")]), &remap).unwrap();
        assert_eq!(out, lm(&[("s1", "roll"), ("s2", "roll"), ("s3", "!")]));
    }

    #[test]
    fn valence_merge() {
        let src = ClassScheme::from_ids("valence", &["negative", "neutral", "positive"]).unwrap();
        let remap = ClassRemap::merging(
            &src,
            "valence",
            &[("non_positive", &["negative", "neutral"]), ("positive", &["positive"])],
        )
        .unwrap();
        let out = remap_labels(&lm(&[("s1", "neutral"), ("s2", "negative"), ("s3", "positive")]), &remap).unwrap();
        assert_eq!(out, lm(&[("s1", "non_positive"), ("s2", "non_positive"), ("s3", "positive")]));
    }

    #[test]
    fn identity_and_unmapped() {
        let s = ab();
        let labels = lm(&[("x", "A"), ("y", "B")]);
        assert_eq!(remap_labels(&labels, &ClassRemap::identity(&s)).unwrap(), labels);
        let err = remap_labels(&lm(&[("x", "Z")]), &ClassRemap::identity(&s)).unwrap_err();
        assert_eq!(err, LabelError::UnmappedClass("Z".into()));
        let partial: BTreeMap<String, String> = [("A".to_string(), "A".to_string())].into();
        assert!(ClassRemap::new(s.clone(), s, partial).is_err());
    }

    #[test]
    fn histogram_examples() {
        let s = ab();
        let l = lm(&[("1", "A"), ("2", "A"), ("3", "B"), ("4", "B")]);
        assert_eq!(label_histogram(l.values(), &s).unwrap().proportions, vec![0.5, 0.5]);
        let l = lm(&[("1", "A"), ("2", "A"), ("3", "A"), ("4", "B"), ("5", "!")]);
        let h = label_histogram(l.values(), &s).unwrap();
        assert_eq!(h.proportions, vec![0.75, 0.25]);
        assert_eq!(h.support, 4);
        let l = lm(&[("1", "A")]);
        assert_eq!(label_histogram(l.values(), &s).unwrap().proportions, vec![1.0, 0.0]);
        assert_eq!(label_histogram(lm(&[("1", "!")]).values(), &s), Err(LabelError::EmptyLabelSet));
    }

    #[test]
    fn group_stats_examples() {
        let st = histogram_group_stats(&[hist(&[0.3, 0.7]), hist(&[0.3, 0.7]), hist(&[0.3, 0.7])]).unwrap();
        assert!(st.sd.iter().all(|&s| s.abs() < 1e-15));
        let st = histogram_group_stats(&[hist(&[1.0, 0.0]), hist(&[0.0, 1.0])]).unwrap();
        assert_eq!(st.mean, vec![0.5, 0.5]);
        assert_abs_diff_eq!(st.sd[0], 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(st.sd[1], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        let st = histogram_group_stats(&[hist(&[0.6, 0.4]), hist(&[0.5, 0.5]), hist(&[0.4, 0.6])]).unwrap();
        assert_abs_diff_eq!(st.mean[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(st.sd[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(st.sd[1], 0.1, epsilon = 1e-12);
        assert_eq!(histogram_group_stats(&[hist(&[1.0, 0.0])]), Err(LabelError::TooFewHistograms(1)));
        assert!(matches!(
            histogram_group_stats(&[hist(&[1.0, 0.0]), hist(&[0.2, 0.3, 0.5])]),
            Err(LabelError::SchemeMismatch(..))
        ));
    }

    #[test]
    fn hellinger_examples() {
        assert_eq!(hellinger(&hist(&[0.3, 0.7]), &hist(&[0.3, 0.7])).unwrap(), 0.0);
        assert_abs_diff_eq!(hellinger(&hist(&[1.0, 0.0]), &hist(&[0.0, 1.0])).unwrap(), 1.0, epsilon = 1e-15);
        let h = hellinger(&hist(&[1.0, 0.0]), &hist(&[0.5, 0.5])).unwrap();
        assert_abs_diff_eq!(h, (1.0 - 0.5f64.sqrt()).sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(h, 0.54120, epsilon = 1e-5);
    }

    #[test]
    fn mean_pairwise_of_two_is_the_pair() {
        let (p, q) = (hist(&[0.9, 0.1]), hist(&[0.4, 0.6]));
        assert_eq!(mean_pairwise_hellinger(&[p.clone(), q.clone()]).unwrap(), hellinger(&p, &q).unwrap());
        assert_eq!(mean_pairwise_hellinger(&[p.clone(), p.clone(), p.clone()]).unwrap(), 0.0);
        assert_eq!(mean_pairwise_hellinger(&[p]), Err(LabelError::TooFewHistograms(1)));
    }

    #[test]
    fn majority_examples() {
        let sets = [lm(&[("s", "A")]), lm(&[("s", "A")]), lm(&[("s", "B")])];
        for seed in 0..20 {
            assert_eq!(merge_majority(&sets, seed)["s"], "A");
        }
        let tie = [lm(&[("s", "A")]), lm(&[("s", "B")])];
        let first = merge_majority(&tie, 11);
        assert!(first["s"] == "A" || first["s"] == "B");
        for _ in 0..10 {
            assert_eq!(merge_majority(&tie, 11), first);
        }
        assert_eq!(merge_majority(&[lm(&[("s", "A")])], 0)["s"], "A");
    }

    #[test]
    fn majority_tie_draws_both_classes_across_seeds() {
        let tie = [lm(&[("s", "A")]), lm(&[("s", "B")])];
        let picks: std::collections::BTreeSet<String> = (0..64).map(|s| merge_majority(&tie, s)["s"].clone()).collect();
        assert_eq!(picks.len(), 2);
    }

    #[test]
    fn majority_drops_erroneous_votes() {
        let sets = [lm(&[("s", "!"), ("t", "!")]), lm(&[("s", "B"), ("t", "!")]), lm(&[("s", "!")])];
        let m = merge_majority(&sets, 3);
        assert_eq!(m.get("s").map(String::as_str), Some("B"));
        assert!(!m.contains_key("t"));
    }

    #[test]
    fn report_tsv_has_row_per_group_and_class() {
        let s = ab();
        let groups = vec![
            HistogramGroup {
                name: "reference".into(),
                annotators: vec!["gt".into()],
                histograms: vec![LabelHistogram::from_proportions(&s, &[0.8, 0.2], 10).unwrap()],
            },
            HistogramGroup {
                name: "RND".into(),
                annotators: vec!["a1".into(), "a2".into()],
                histograms: vec![
                    LabelHistogram::from_proportions(&s, &[1.0, 0.0], 2).unwrap(),
                    LabelHistogram::from_proportions(&s, &[0.0, 1.0], 2).unwrap(),
                ],
            },
        ];
        let tsv = histogram_report_tsv(&s, &groups).unwrap();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[3], "RND\tA\t0.500000\t0.707107\ta1=1.000000,a2=0.000000");
    }
}
