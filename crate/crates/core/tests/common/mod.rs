#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeMap;
use std::path::PathBuf;

use annoselect::dataset::{ClassScheme, Dataset, FeatureMatrix, MediaKind, MediaRef, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const TRACK: &str = "activity";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FeatureMatrix {
    let vals: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    FeatureMatrix::new(n, d, vals)
}

pub fn sample_id(i: usize) -> String {
    format!("smp{i:05}")
}

/// `n` samples in `k` Gaussian clusters, cluster `c` centered on
/// `spread * e_c + 1` in `d` dimensions. Class ids are `c0`, `c1`, ...
/// Sample `i` belongs to cluster `i % k`.
pub fn clustered_dataset(n: usize, k: usize, d: usize, spread: f64, seed: u64) -> Dataset {
    clustered_dataset_with(n, k, d, spread, seed, |i| i % k)
}

/// Like [`clustered_dataset`] with sample `i` in cluster `class_of(i)`.
pub fn clustered_dataset_with(
    n: usize,
    k: usize,
    d: usize,
    spread: f64,
    seed: u64,
    class_of: impl Fn(usize) -> usize,
) -> Dataset {
    assert!(d >= k);
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut vals = Vec::with_capacity(n * d);
    let mut truth = BTreeMap::new();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let c = class_of(i);
        for j in 0..d {
            let center = 1.0 + if j == c { spread } else { 0.0 };
            vals.push(center + noise.sample(&mut r));
        }
        truth.insert(sample_id(i), format!("c{c}"));
        samples.push(Sample {
            sample_id: sample_id(i),
            global_index: i,
            media: vec![MediaRef {
                kind: MediaKind::Video,
                uri: format!("media/{}.mp4", sample_id(i)),
                channels: Vec::new(),
            }],
            duration_s: 2.0,
        });
    }
    let ids: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
    let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let scheme = ClassScheme::from_ids(TRACK, &id_refs).unwrap();
    Dataset::new(
        "synthetic",
        PathBuf::from("."),
        samples,
        FeatureMatrix::new(n, d, vals),
        vec![scheme],
        [(TRACK.to_string(), truth)].into(),
    )
    .unwrap()
}
