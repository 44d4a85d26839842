//! Named 2D embeddings of the feature matrix.
//!
//! PCA and exact t-SNE are computed in-process; any other embedding (UMAP,
//! for instance) is imported from a precomputed coordinate file.

mod pca;
mod tsne;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binmat;

pub use pca::{compute_pca, PcaResult};
pub use tsne::{
    calibrate_affinities, compute_tsne, compute_tsne_with, initial_embedding, joint_probabilities,
    kl_divergence, kl_gradient, optimize_line_search, squared_distances, Calibration, TsneConfig,
    TsneOptimizer,
};

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid t-SNE configuration: {0}")]
    InvalidConfig(String),
    #[error("perplexity calibration did not converge for point {point} (perplexity reached {reached})")]
    CalibrationFailure { point: usize, reached: f64 },
    #[error("expected a {expected_rows}x2 coordinate matrix, found {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        rows: usize,
        cols: usize,
    },
    #[error("non-finite coordinate at row {row}, column {col}")]
    NonFiniteCoordinate { row: usize, col: usize },
    #[error("a projection named {0:?} already exists")]
    DuplicateName(String),
    #[error("unknown projection {0:?}")]
    UnknownProjection(String),
    #[error("job cancelled")]
    Cancelled,
    #[error("cannot read coordinates: {0}")]
    Read(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    ComputedPca,
    ComputedTsne { config: TsneConfig },
    Imported { source: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    pub name: String,
    /// Row-major `N x 2`.
    pub coords: Vec<[f64; 2]>,
    pub provenance: Provenance,
}

impl Projection2D {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.coords.iter().flat_map(|c| c.iter().copied()).collect()
    }

    /// Binary matrix encoding served to the UI and written by `project`.
    pub fn to_bytes(&self) -> Vec<u8> {
        binmat::encode(self.coords.len(), 2, &self.flat())
    }
}

/// Progress and cancellation hooks for long-running projection jobs.
pub trait JobControl: Sync {
    fn report(&self, _fraction: f64) {}
    fn cancelled(&self) -> bool {
        false
    }
}

/// No-op control for synchronous callers.
pub struct Detached;

impl JobControl for Detached {}

impl JobControl for AtomicBool {
    fn cancelled(&self) -> bool {
        self.load(Ordering::Relaxed)
    }
}

pub fn projection_from_matrix(
    name: &str,
    raw: binmat::RawMatrix,
    n_expected: usize,
    provenance: Provenance,
) -> Result<Projection2D, ProjectionError> {
    if raw.n_cols != 2 || raw.n_rows != n_expected {
        return Err(ProjectionError::ShapeMismatch {
            expected_rows: n_expected,
            rows: raw.n_rows,
            cols: raw.n_cols,
        });
    }
    if let Some(pos) = raw.values.iter().position(|v| !v.is_finite()) {
        return Err(ProjectionError::NonFiniteCoordinate {
            row: pos / 2,
            col: pos % 2,
        });
    }
    Ok(Projection2D {
        name: name.to_string(),
        coords: raw.values.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        provenance,
    })
}

/// Published projections keyed by name. Entries are immutable once inserted.
#[derive(Debug, Default, Clone)]
pub struct ProjectionRegistry {
    entries: BTreeMap<String, std::sync::Arc<Projection2D>>,
}

impl ProjectionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn get(&self, name: &str) -> Option<std::sync::Arc<Projection2D>> {
        self.entries.get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn insert(&mut self, p: Projection2D) -> Result<std::sync::Arc<Projection2D>, ProjectionError> {
        if self.entries.contains_key(&p.name) {
            return Err(ProjectionError::DuplicateName(p.name));
        }
        let p = std::sync::Arc::new(p);
        self.entries.insert(p.name.clone(), p.clone());
        Ok(p)
    }

    /// Reads a binary `N x 2` coordinate file and registers it under `name`.
    pub fn import_projection(
        &mut self,
        name: &str,
        coords_path: &Path,
        n_expected: usize,
    ) -> Result<std::sync::Arc<Projection2D>, ProjectionError> {
        if self.contains(name) {
            return Err(ProjectionError::DuplicateName(name.to_string()));
        }
        let p = import_projection(name, coords_path, n_expected)?;
        self.insert(p)
    }
}

/// Loads and validates a projection file without registering it.
pub fn import_projection(name: &str, coords_path: &Path, n_expected: usize) -> Result<Projection2D, ProjectionError> {
    let raw = binmat::read_file(coords_path).map_err(|e| ProjectionError::Read(e.to_string()))?;
    projection_from_matrix(
        name,
        raw,
        n_expected,
        Provenance::Imported {
            source: coords_path.display().to_string(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, rows: usize, cols: usize, vals: &[f64]) -> std::path::PathBuf {
        let p = dir.join(name);
        binmat::write_file(&p, rows, cols, vals).unwrap();
        p
    }

    #[test]
    fn import_valid_file() {
        let dir = tempfile::tempdir().unwrap();
        let vals: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let p = write(dir.path(), "umap.bin", 10, 2, &vals);
        let mut reg = ProjectionRegistry::new();
        let proj = reg.import_projection("umap", &p, 10).unwrap();
        assert_eq!(proj.len(), 10);
        assert_eq!(proj.coords[3], [6.0, 7.0]);
        assert_eq!(reg.names(), vec!["umap".to_string()]);
    }

    #[test]
    fn import_rejects_three_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.bin", 10, 3, &[0.0; 30]);
        let err = import_projection("bad", &p, 10).unwrap_err();
        assert!(matches!(err, ProjectionError::ShapeMismatch { rows: 10, cols: 3, .. }));
    }

    #[test]
    fn import_rejects_row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "short.bin", 9, 2, &[0.0; 18]);
        assert!(matches!(
            import_projection("s", &p, 10),
            Err(ProjectionError::ShapeMismatch { rows: 9, .. })
        ));
    }

    #[test]
    fn import_reports_infinite_coordinate() {
        let dir = tempfile::tempdir().unwrap();
        let mut vals = vec![0.0; 20];
        vals[7] = f64::INFINITY;
        let p = write(dir.path(), "inf.bin", 10, 2, &vals);
        assert!(matches!(
            import_projection("inf", &p, 10),
            Err(ProjectionError::NonFiniteCoordinate { row: 3, col: 1 })
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.bin", 2, 2, &[0.0; 4]);
        let mut reg = ProjectionRegistry::new();
        reg.import_projection("umap", &p, 2).unwrap();
        assert!(matches!(
            reg.import_projection("umap", &p, 2),
            Err(ProjectionError::DuplicateName(n)) if n == "umap"
        ));
    }
}
