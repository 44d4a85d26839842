//! Dataset model and manifest ingestion.
//!
//! A dataset directory holds a `manifest.toml` naming the feature matrix
//! (binary, see [`crate::binmat`]), a sample table and the class schemes of
//! every annotation track:
//!
//! ```toml
//! name = "toy"
//! features = "features.bin"
//! samples = "samples.csv"
//! ground_truth = "ground_truth.csv"   # optional
//!
//! [[schemes]]
//! track = "posture"
//! allows_erroneous = true
//! classes = [
//!   { id = "prone", name = "Prone", color = "#1f77b4", key = "1" },
//!   { id = "supine", name = "Supine", color = "#ff7f0e", key = "2" },
//! ]
//!
//! [[projections]]                     # optional precomputed embeddings
//! name = "umap"
//! path = "umap.bin"
//! ```
//!
//! The sample table is CSV with header `sample_id,global_index,duration_s,media`.
//! `media` is a `;`-separated list of `kind:uri` entries, optionally followed by
//! `|ch1,ch2,...` channel names (`signal:imu/s1.bin|acc_x,acc_y,acc_z`).
//! Ground truth is CSV with header `sample_id,track,class_id`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binmat::{self, BinMatError};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },
    #[error("feature matrix has {feature_rows} rows but the sample table lists {samples} samples")]
    DimensionMismatch { feature_rows: usize, samples: usize },
    #[error("duplicate sample id {0:?}")]
    DuplicateSampleId(String),
    #[error("ground truth for sample {sample_id:?} in track {track:?} uses unknown class {class_id:?}")]
    UnknownClassInGroundTruth {
        sample_id: String,
        track: String,
        class_id: String,
    },
    #[error("ground truth references unknown {what} {name:?}")]
    UnknownReference { what: &'static str, name: String },
    #[error("invalid class scheme {track:?}: {message}")]
    InvalidScheme { track: String, message: String },
    #[error("global indices must be a permutation of 0..{n}: {message}")]
    InvalidGlobalIndex { n: usize, message: String },
    #[error("non-finite feature value {value} at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize, value: f64 },
}

impl From<BinMatError> for DatasetError {
    fn from(e: BinMatError) -> Self {
        match e {
            BinMatError::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
                DatasetError::MissingFile(PathBuf::from(path))
            }
            other => DatasetError::Parse {
                what: "binary matrix".into(),
                message: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub id: String,
    pub name: String,
    /// `#rrggbb`
    pub color: String,
    pub key: char,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassScheme {
    pub track: String,
    pub classes: Vec<ClassDef>,
    #[serde(default = "default_true")]
    pub allows_erroneous: bool,
}

fn default_true() -> bool {
    true
}

impl ClassScheme {
    pub fn new(track: impl Into<String>, classes: Vec<ClassDef>, allows_erroneous: bool) -> Result<Self, DatasetError> {
        let scheme = ClassScheme {
            track: track.into(),
            classes,
            allows_erroneous,
        };
        scheme.validate()?;
        Ok(scheme)
    }

    /// Builds a scheme from bare class ids, assigning palette colors and
    /// digit shortcuts `1..9`, then letters.
    pub fn from_ids(track: impl Into<String>, ids: &[&str]) -> Result<Self, DatasetError> {
        const PALETTE: [&str; 10] = [
            "#1f77b4", "#ff7f0e", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
            "#17becf", "#393b79",
        ];
        let keys = "123456789abcdefghijklmnopqrstuvwxyz";
        let classes = ids
            .iter()
            .enumerate()
            .map(|(i, id)| ClassDef {
                id: id.to_string(),
                name: id.to_string(),
                color: PALETTE[i % PALETTE.len()].to_string(),
                key: keys.chars().nth(i).unwrap_or('?'),
            })
            .collect();
        ClassScheme::new(track, classes, true)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let fail = |message: String| DatasetError::InvalidScheme {
            track: self.track.clone(),
            message,
        };
        if self.classes.len() < 2 {
            return Err(fail(format!("needs at least 2 classes, has {}", self.classes.len())));
        }
        let mut ids = HashSet::new();
        let mut keys = HashSet::new();
        for c in &self.classes {
            if !ids.insert(c.id.as_str()) {
                return Err(fail(format!("duplicate class id {:?}", c.id)));
            }
            if !keys.insert(c.key) {
                return Err(fail(format!("duplicate shortcut key {:?}", c.key)));
            }
            if !is_hex_color(&c.color) {
                return Err(fail(format!("class {:?} has invalid color {:?}", c.id, c.color)));
            }
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, class_id: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.id == class_id)
    }

    pub fn contains(&self, class_id: &str) -> bool {
        self.class_index(class_id).is_some()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.id.as_str())
    }
}

fn is_hex_color(s: &str) -> bool {
    s.len() == 7 && s.starts_with('#') && s[1..].chars().all(|c| c.is_ascii_hexdigit())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Video,
    Audio,
    Signal,
}

impl MediaKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MediaKind::Video => "video",
            MediaKind::Audio => "audio",
            MediaKind::Signal => "signal",
        }
    }
}

impl std::str::FromStr for MediaKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "video" => Ok(MediaKind::Video),
            "audio" => Ok(MediaKind::Audio),
            "signal" => Ok(MediaKind::Signal),
            other => Err(format!("unknown media kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MediaRef {
    pub kind: MediaKind,
    /// Relative to the dataset root.
    pub uri: String,
    #[serde(default)]
    pub channels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub global_index: usize,
    pub media: Vec<MediaRef>,
    pub duration_s: f64,
}

/// Row-major `n_samples x n_dims` matrix; row `i` belongs to global index `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_samples: usize,
    n_dims: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_samples: usize, n_dims: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_samples * n_dims, "value count does not match shape");
        FeatureMatrix {
            n_samples,
            n_dims,
            values,
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n_dims = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * n_dims);
        for r in rows {
            assert_eq!(r.as_ref().len(), n_dims, "ragged rows");
            values.extend_from_slice(r.as_ref());
        }
        FeatureMatrix::new(rows.len(), n_dims, values)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_dims..(i + 1) * self.n_dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_dims.max(1)).take(self.n_samples)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureDefect {
    NaN,
    Inf,
    ZeroRow,
}

impl fmt::Display for FeatureDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureDefect::NaN => "NaN",
            FeatureDefect::Inf => "Inf",
            FeatureDefect::ZeroRow => "all-zero row",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureIssue {
    pub row: usize,
    /// `None` for row-level defects.
    pub col: Option<usize>,
    pub defect: FeatureDefect,
}

impl FeatureIssue {
    /// Zero rows only degrade cosine distance; everything else is fatal.
    pub fn is_warning(&self) -> bool {
        self.defect == FeatureDefect::ZeroRow
    }
}

/// Scans for non-finite entries and all-zero rows.
pub fn validate_features(m: &FeatureMatrix) -> Vec<FeatureIssue> {
    let mut report = Vec::new();
    for (row, values) in m.rows().enumerate() {
        let mut all_zero = true;
        for (col, v) in values.iter().enumerate() {
            if v.is_nan() {
                report.push(FeatureIssue {
                    row,
                    col: Some(col),
                    defect: FeatureDefect::NaN,
                });
            } else if v.is_infinite() {
                report.push(FeatureIssue {
                    row,
                    col: Some(col),
                    defect: FeatureDefect::Inf,
                });
            }
            if *v != 0.0 {
                all_zero = false;
            }
        }
        if all_zero && m.n_dims() > 0 {
            report.push(FeatureIssue {
                row,
                col: None,
                defect: FeatureDefect::ZeroRow,
            });
        }
    }
    report
}

/// `track -> (sample_id -> class_id)`
pub type GroundTruth = BTreeMap<String, BTreeMap<String, String>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRef {
    pub name: String,
    pub path: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    /// Root directory media URIs are resolved against.
    pub root: PathBuf,
    /// Sorted by `global_index`, so `samples[i].global_index == i`.
    pub samples: Vec<Sample>,
    pub features: FeatureMatrix,
    pub schemes: Vec<ClassScheme>,
    pub ground_truth: GroundTruth,
    pub projections: Vec<ProjectionRef>,
    id_index: HashMap<String, usize>,
    /// Zero-row warnings collected at ingest.
    pub warnings: Vec<FeatureIssue>,
}

impl Dataset {
    /// Assembles and validates an in-memory dataset. Samples may come in any
    /// order; they are sorted by global index.
    pub fn new(
        name: impl Into<String>,
        root: PathBuf,
        mut samples: Vec<Sample>,
        features: FeatureMatrix,
        schemes: Vec<ClassScheme>,
        ground_truth: GroundTruth,
    ) -> Result<Self, DatasetError> {
        let n = samples.len();
        if features.n_samples() != n {
            return Err(DatasetError::DimensionMismatch {
                feature_rows: features.n_samples(),
                samples: n,
            });
        }
        let mut id_index = HashMap::with_capacity(n);
        for s in &samples {
            if id_index.insert(s.sample_id.clone(), s.global_index).is_some() {
                return Err(DatasetError::DuplicateSampleId(s.sample_id.clone()));
            }
            if !s.duration_s.is_finite() || s.duration_s < 0.0 {
                return Err(DatasetError::Parse {
                    what: "sample table".into(),
                    message: format!("sample {:?} has invalid duration {}", s.sample_id, s.duration_s),
                });
            }
        }
        samples.sort_by_key(|s| s.global_index);
        for (i, s) in samples.iter().enumerate() {
            if s.global_index != i {
                return Err(DatasetError::InvalidGlobalIndex {
                    n,
                    message: format!("expected index {i}, found {} (sample {:?})", s.global_index, s.sample_id),
                });
            }
        }
        let issues = validate_features(&features);
        if let Some(bad) = issues.iter().find(|i| !i.is_warning()) {
            let col = bad.col.unwrap_or(0);
            return Err(DatasetError::NonFiniteFeature {
                row: bad.row,
                col,
                value: features.row(bad.row)[col],
            });
        }
        let mut tracks = HashSet::new();
        for s in &schemes {
            s.validate()?;
            if !tracks.insert(s.track.as_str()) {
                return Err(DatasetError::InvalidScheme {
                    track: s.track.clone(),
                    message: "track declared twice".into(),
                });
            }
        }
        for (track, labels) in &ground_truth {
            let scheme = schemes
                .iter()
                .find(|s| &s.track == track)
                .ok_or_else(|| DatasetError::UnknownReference {
                    what: "track",
                    name: track.clone(),
                })?;
            for (sample_id, class_id) in labels {
                if !id_index.contains_key(sample_id) {
                    return Err(DatasetError::UnknownReference {
                        what: "sample",
                        name: sample_id.clone(),
                    });
                }
                if !scheme.contains(class_id) {
                    return Err(DatasetError::UnknownClassInGroundTruth {
                        sample_id: sample_id.clone(),
                        track: track.clone(),
                        class_id: class_id.clone(),
                    });
                }
            }
        }
        Ok(Dataset {
            name: name.into(),
            root,
            samples,
            features,
            schemes,
            ground_truth,
            projections: Vec::new(),
            id_index,
            warnings: issues,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn index_of(&self, sample_id: &str) -> Option<usize> {
        self.id_index.get(sample_id).copied()
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.sample_id.clone()).collect()
    }

    pub fn scheme(&self, track: &str) -> Option<&ClassScheme> {
        self.schemes.iter().find(|s| s.track == track)
    }

    /// Ground truth of a track keyed by global index.
    pub fn truth_by_index(&self, track: &str) -> Option<BTreeMap<usize, String>> {
        self.ground_truth.get(track).map(|m| {
            m.iter()
                .map(|(id, c)| (self.id_index[id], c.clone()))
                .collect()
        })
    }
}

#[derive(Debug, Deserialize)]
struct Manifest {
    name: String,
    features: String,
    samples: String,
    #[serde(default)]
    ground_truth: Option<String>,
    schemes: Vec<ManifestScheme>,
    #[serde(default)]
    projections: Vec<ProjectionRef>,
}

#[derive(Debug, Deserialize)]
struct ManifestScheme {
    track: String,
    #[serde(default = "default_true")]
    allows_erroneous: bool,
    classes: Vec<ClassDef>,
}

#[derive(Debug, Deserialize)]
struct SampleRow {
    sample_id: String,
    global_index: usize,
    duration_s: f64,
    #[serde(default)]
    media: String,
}

#[derive(Debug, Deserialize)]
struct TruthRow {
    sample_id: String,
    track: String,
    class_id: String,
}

/// Resolves either a dataset directory or a direct path to its manifest.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn ingest_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let manifest_file = manifest_path(path);
    let root = manifest_file
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let text = read_text(&manifest_file)?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| DatasetError::Parse {
        what: "manifest".into(),
        message: e.to_string(),
    })?;

    let samples = parse_samples(&read_text(&root.join(&manifest.samples))?)?;
    let raw = binmat::read_file(&root.join(&manifest.features))?;
    let features = FeatureMatrix::new(raw.n_rows, raw.n_cols, raw.values);

    let schemes = manifest
        .schemes
        .into_iter()
        .map(|s| ClassScheme {
            track: s.track,
            classes: s.classes,
            allows_erroneous: s.allows_erroneous,
        })
        .collect();

    let ground_truth = match &manifest.ground_truth {
        Some(rel) => parse_ground_truth(&read_text(&root.join(rel))?)?,
        None => GroundTruth::new(),
    };

    let mut ds = Dataset::new(manifest.name, root, samples, features, schemes, ground_truth)?;
    ds.projections = manifest.projections;
    Ok(ds)
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            DatasetError::MissingFile(path.to_path_buf())
        } else {
            DatasetError::Read {
                path: path.to_path_buf(),
                message: e.to_string(),
            }
        }
    })
}

fn parse_samples(text: &str) -> Result<Vec<Sample>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in rdr.deserialize::<SampleRow>() {
        let row = row.map_err(|e| DatasetError::Parse {
            what: "sample table".into(),
            message: e.to_string(),
        })?;
        let media = parse_media(&row.media).map_err(|message| DatasetError::Parse {
            what: "sample table".into(),
            message: format!("sample {:?}: {message}", row.sample_id),
        })?;
        out.push(Sample {
            sample_id: row.sample_id,
            global_index: row.global_index,
            media,
            duration_s: row.duration_s,
        });
    }
    Ok(out)
}

pub fn parse_media(field: &str) -> Result<Vec<MediaRef>, String> {
    field
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|entry| {
            let (kind, rest) = entry
                .split_once(':')
                .ok_or_else(|| format!("media entry {entry:?} lacks a kind prefix"))?;
            let (uri, channels) = match rest.split_once('|') {
                Some((uri, ch)) => (uri, ch.split(',').map(|c| c.trim().to_string()).collect()),
                None => (rest, Vec::new()),
            };
            Ok(MediaRef {
                kind: kind.trim().parse()?,
                uri: uri.trim().to_string(),
                channels,
            })
        })
        .collect()
}

pub fn format_media(media: &[MediaRef]) -> String {
    media
        .iter()
        .map(|m| {
            if m.channels.is_empty() {
                format!("{}:{}", m.kind.as_str(), m.uri)
            } else {
                format!("{}:{}|{}", m.kind.as_str(), m.uri, m.channels.join(","))
            }
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_ground_truth(text: &str) -> Result<GroundTruth, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut gt = GroundTruth::new();
    for row in rdr.deserialize::<TruthRow>() {
        let row = row.map_err(|e| DatasetError::Parse {
            what: "ground truth".into(),
            message: e.to_string(),
        })?;
        gt.entry(row.track).or_default().insert(row.sample_id, row.class_id);
    }
    Ok(gt)
}

/// Writes a dataset directory in manifest format. Used by fixtures and by
/// tooling that converts feature dumps.
pub fn write_dataset_dir(dir: &Path, ds: &Dataset) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let f = &ds.features;
    binmat::write_file(&dir.join("features.bin"), f.n_samples(), f.n_dims(), f.values())
        .map_err(|e| std::io::Error::other(e.to_string()))?;

    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    wtr.write_record(["sample_id", "global_index", "duration_s", "media"])?;
    for s in &ds.samples {
        wtr.write_record([
            s.sample_id.as_str(),
            &s.global_index.to_string(),
            &s.duration_s.to_string(),
            &format_media(&s.media),
        ])?;
    }
    std::fs::write(dir.join("samples.csv"), wtr.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)?;

    let mut manifest = format!(
        "name = {}\nfeatures = \"features.bin\"\nsamples = \"samples.csv\"\n",
        toml_str(&ds.name)
    );
    if !ds.ground_truth.is_empty() {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        wtr.write_record(["sample_id", "track", "class_id"])?;
        for (track, labels) in &ds.ground_truth {
            for (sid, cid) in labels {
                wtr.write_record([sid, track, cid])?;
            }
        }
        std::fs::write(
            dir.join("ground_truth.csv"),
            wtr.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?,
        )?;
        manifest.push_str("ground_truth = \"ground_truth.csv\"\n");
    }
    for s in &ds.schemes {
        manifest.push_str(&format!(
            "\n[[schemes]]\ntrack = {}\nallows_erroneous = {}\nclasses = [\n",
            toml_str(&s.track),
            s.allows_erroneous
        ));
        for c in &s.classes {
            manifest.push_str(&format!(
                "  {{ id = {}, name = {}, color = {}, key = {} }},\n",
                toml_str(&c.id),
                toml_str(&c.name),
                toml_str(&c.color),
                toml_str(&c.key.to_string())
            ));
        }
        manifest.push_str("]\n");
    }
    for p in &ds.projections {
        manifest.push_str(&format!(
            "\n[[projections]]\nname = {}\npath = {}\n",
            toml_str(&p.name),
            toml_str(&p.path)
        ));
    }
    std::fs::write(dir.join(MANIFEST_FILE), manifest)
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}
