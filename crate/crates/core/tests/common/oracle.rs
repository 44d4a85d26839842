//! From-scratch reference implementations used to check the library.

use annoselect::dataset::FeatureMatrix;
use annoselect::sampling::DistanceMetric;
use nalgebra::DMatrix;

fn min_to_set(m: &FeatureMatrix, x: usize, set: &[usize], metric: DistanceMetric) -> f64 {
    set.iter()
        .map(|&y| metric.distance(m.row(x), m.row(y)))
        .fold(f64::INFINITY, f64::min)
}

/// Farthest-first traversal that recomputes every point's distance to the
/// selected set at every step.
pub fn faft_brute(m: &FeatureMatrix, budget: usize, first: usize, metric: DistanceMetric) -> Vec<usize> {
    let mut order = vec![first];
    while order.len() < budget {
        let mut best: Option<(usize, f64)> = None;
        for x in 0..m.n_samples() {
            if order.contains(&x) {
                continue;
            }
            let d = min_to_set(m, x, &order, metric);
            match best {
                Some((_, b)) if d <= b => {}
                _ => best = Some((x, d)),
            }
        }
        order.push(best.unwrap().0);
    }
    order
}

/// `r_t`: distance from `order[t]` to `order[..t]`, for `t >= 1`.
pub fn min_distance_sequence(m: &FeatureMatrix, order: &[usize], metric: DistanceMetric) -> Vec<f64> {
    (1..order.len())
        .map(|t| min_to_set(m, order[t], &order[..t], metric))
        .collect()
}

pub fn covering_radius(m: &FeatureMatrix, centers: &[usize], metric: DistanceMetric) -> f64 {
    (0..m.n_samples())
        .map(|x| min_to_set(m, x, centers, metric))
        .fold(0.0, f64::max)
}

/// Optimal k-center radius by trying every k-subset.
pub fn kcenter_optimum(m: &FeatureMatrix, k: usize, metric: DistanceMetric) -> f64 {
    let n = m.n_samples();
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        best = best.min(covering_radius(m, &idx, metric));
        // next combination in lexicographic order
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return best;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Top two principal variances from the singular values of the centered
/// data matrix: `s_i^2 / (n - 1)`.
pub fn pca_variances_by_svd(m: &FeatureMatrix) -> (Vec<f64>, DMatrix<f64>) {
    let (n, d) = (m.n_samples(), m.n_dims());
    let mut x = DMatrix::from_row_slice(n, d, m.values());
    for j in 0..d {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let svd = x.svd(false, true);
    let mut pairs: Vec<(f64, usize)> = svd.singular_values.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let vals = pairs.iter().map(|(s, _)| s * s / (n as f64 - 1.0)).collect();
    let v_t = svd.v_t.unwrap();
    let mut comps = DMatrix::zeros(pairs.len(), d);
    for (r, (_, i)) in pairs.iter().enumerate() {
        comps.row_mut(r).copy_from(&v_t.row(*i));
    }
    (vals, comps)
}

/// k-NN by sorting every training point; ties by index then class order.
pub fn knn_brute(
    m: &FeatureMatrix,
    train: &[(usize, usize)],
    test: &[usize],
    k: usize,
    metric: DistanceMetric,
    n_classes: usize,
) -> Vec<usize> {
    let k = k.min(train.len());
    test.iter()
        .map(|&t| {
            let mut d: Vec<(f64, usize, usize)> = train
                .iter()
                .map(|&(i, c)| (metric.distance(m.row(t), m.row(i)), i, c))
                .collect();
            d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut votes = vec![0; n_classes];
            for x in &d[..k] {
                votes[x.2] += 1;
            }
            let mut best = 0;
            for c in 1..n_classes {
                if votes[c] > votes[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Hellinger distance straight from its definition.
pub fn hellinger_def(p: &[f64], q: &[f64]) -> f64 {
    let s: f64 = p.iter().zip(q).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum();
    (s / 2.0).sqrt()
}
