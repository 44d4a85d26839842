//! Algorithmic sample selection: seeded uniform random sampling and
//! farthest-first traversal (k-center greedy).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SamplingError {
    #[error("budget {budget} exceeds population of {n_total}")]
    BudgetExceedsPopulation { budget: usize, n_total: usize },
    #[error("budget must be positive")]
    ZeroBudget,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("first pick {first} out of range for {n_total} samples")]
    FirstPickOutOfRange { first: usize, n_total: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "RND")]
    Random,
    #[serde(rename = "FAFT")]
    Faft,
    #[serde(rename = "2DV")]
    TwoDv,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Random, Method::Faft, Method::TwoDv];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "RND",
            Method::Faft => "FAFT",
            Method::TwoDv => "2DV",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rnd" | "random" => Ok(Method::Random),
            "faft" => Ok(Method::Faft),
            "2dv" => Ok(Method::TwoDv),
            _ => Err(format!("unknown method {s:?} (expected rnd, faft or 2dv)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Cosine,
    Euclidean,
}

impl FromStr for DistanceMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(DistanceMetric::Cosine),
            "euclidean" => Ok(DistanceMetric::Euclidean),
            _ => Err(format!("unknown metric {s:?} (expected cosine or euclidean)")),
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::Cosine => "cosine",
            DistanceMetric::Euclidean => "euclidean",
        })
    }
}

impl DistanceMetric {
    /// Panics on unequal lengths; use [`cosine_distance`] for a checked call.
    #[inline]
    pub fn distance(self, u: &[f64], v: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), v.len());
        match self {
            DistanceMetric::Cosine => cosine_unchecked(u, v),
            DistanceMetric::Euclidean => u
                .iter()
                .zip(v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// `1 - cos(u, v)` clamped to `[0, 2]`. A zero vector is at the maximum
/// distance 1 from everything, itself included.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64, SamplingError> {
    if u.len() != v.len() {
        return Err(SamplingError::LengthMismatch(u.len(), v.len()));
    }
    Ok(cosine_unchecked(u, v))
}

#[inline]
fn cosine_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (nu * nv).sqrt()).clamp(0.0, 2.0)
}

/// Annotation order produced by a selection strategy. For 2DV the order is
/// empty at creation and grows with the annotator's clicks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOrder {
    pub method: Method,
    pub order: Vec<usize>,
    pub seed: u64,
    pub metric: Option<DistanceMetric>,
}

pub(crate) fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_budget(n_total: usize, budget: usize) -> Result<(), SamplingError> {
    if budget == 0 {
        return Err(SamplingError::ZeroBudget);
    }
    if budget > n_total {
        return Err(SamplingError::BudgetExceedsPopulation { budget, n_total });
    }
    Ok(())
}

/// Uniform sampling without replacement by sequential draws (partial
/// Fisher-Yates). Draw `t` depends only on draws `0..t`, so any prefix of the
/// order is itself a uniform sample of that size under the same seed.
pub fn sample_random(n_total: usize, budget: usize, seed: u64) -> Result<SampleOrder, SamplingError> {
    check_budget(n_total, budget)?;
    let mut rng = rng_for(seed);
    let mut pool: Vec<usize> = (0..n_total).collect();
    for t in 0..budget {
        let j = rng.gen_range(t..n_total);
        pool.swap(t, j);
    }
    pool.truncate(budget);
    Ok(SampleOrder {
        method: Method::Random,
        order: pool,
        seed,
        metric: None,
    })
}

/// Farthest-first traversal. The first pick consumes exactly one draw from the
/// seeded generator, the same draw [`sample_random`] uses for its first
/// element.
pub fn sample_faft(
    features: &FeatureMatrix,
    budget: usize,
    seed: u64,
    metric: DistanceMetric,
) -> Result<SampleOrder, SamplingError> {
    let n = features.n_samples();
    check_budget(n, budget)?;
    let first = rng_for(seed).gen_range(0..n);
    let order = faft_from(features, budget, first, metric)?;
    Ok(SampleOrder {
        method: Method::Faft,
        order,
        seed,
        metric: Some(metric),
    })
}

/// Farthest-first traversal from a fixed first pick.
///
/// Keeps the distance from every unselected point to its nearest selected
/// point and refreshes it against each new pick, so the whole run costs
/// `budget * N` distance evaluations. Ties in the argmax go to the lowest
/// global index.
pub fn faft_from(
    features: &FeatureMatrix,
    budget: usize,
    first: usize,
    metric: DistanceMetric,
) -> Result<Vec<usize>, SamplingError> {
    let n = features.n_samples();
    check_budget(n, budget)?;
    if first >= n {
        return Err(SamplingError::FirstPickOutOfRange { first, n_total: n });
    }
    let mut order = Vec::with_capacity(budget);
    order.push(first);
    if budget == 1 {
        return Ok(order);
    }
    let mut selected = vec![false; n];
    selected[first] = true;
    let mut nearest = vec![f64::INFINITY; n];
    let mut last = first;
    while order.len() < budget {
        let anchor = features.row(last);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let d = metric.distance(features.row(i), anchor);
            if d < nearest[i] {
                nearest[i] = d;
            }
            // strict '>' keeps the lowest index among ties
            if best.is_none_or(|(_, b)| nearest[i] > b) {
                best = Some((i, nearest[i]));
            }
        }
        let (pick, _) = best.expect("budget <= n leaves an unselected point");
        selected[pick] = true;
        order.push(pick);
        last = pick;
    }
    Ok(order)
}

/// Distance from `x` to its nearest member of `set`.
pub fn distance_to_set(features: &FeatureMatrix, x: usize, set: &[usize], metric: DistanceMetric) -> f64 {
    set.iter()
        .map(|&y| metric.distance(features.row(x), features.row(y)))
        .fold(f64::INFINITY, f64::min)
}

/// Largest distance from any point to its nearest member of `centers`.
pub fn covering_radius(features: &FeatureMatrix, centers: &[usize], metric: DistanceMetric) -> f64 {
    (0..features.n_samples())
        .map(|x| distance_to_set(features, x, centers, metric))
        .fold(0.0, f64::max)
}
