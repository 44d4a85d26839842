use nalgebra::{DMatrix, SymmetricEigen};

use super::{Projection2D, ProjectionError, Provenance};
use crate::dataset::FeatureMatrix;

#[derive(Debug, Clone)]
pub struct PcaResult {
    pub projection: Projection2D,
    /// Top two principal axes, each of length `n_dims`, unit norm.
    pub components: [Vec<f64>; 2],
    /// All covariance eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
}

impl PcaResult {
    pub fn explained_variance(&self) -> [f64; 2] {
        [self.eigenvalues[0], self.eigenvalues[1]]
    }
}

/// Projects mean-centered rows onto the top two eigenvectors of the sample
/// covariance. Each axis is oriented so its largest-magnitude loading is
/// positive.
pub fn compute_pca(m: &FeatureMatrix) -> Result<PcaResult, ProjectionError> {
    let (n, d) = (m.n_samples(), m.n_dims());
    if n < 2 || d < 2 {
        return Err(ProjectionError::DegenerateInput(format!(
            "PCA needs at least 2 samples and 2 dimensions, got {n}x{d}"
        )));
    }

    let mut mean = vec![0.0; d];
    for row in m.rows() {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);

    let centered = DMatrix::from_fn(n, d, |i, j| m.row(i)[j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();

    let axis = |k: usize| -> Vec<f64> {
        let col = eig.eigenvectors.column(idx[k]);
        let mut v: Vec<f64> = col.iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.abs().total_cmp(&b.abs()).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    let components = [axis(0), axis(1)];

    let coords = (0..n)
        .map(|i| {
            let row = centered.row(i);
            let proj = |c: &[f64]| row.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
            [proj(&components[0]), proj(&components[1])]
        })
        .collect();

    Ok(PcaResult {
        projection: Projection2D {
            name: "pca".into(),
            coords,
            provenance: Provenance::ComputedPca,
        },
        components,
        eigenvalues,
        mean,
    })
}
