//! Annotation session state machine for one annotator, method and track.
//!
//! RND and FAFT sessions walk a precomputed order; 2DV sessions start empty
//! and are steered by selections and a FIFO queue. Erroneous labels consume
//! budget like any other label and are filtered out only during analysis.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{ClassScheme, Dataset};
use crate::sampling::{self, DistanceMetric, Method, SampleOrder, SamplingError};

pub const CSV_HEADER: &str =
    "sample_id,track,method,annotator_id,annotator_group,label,is_erroneous,annotation_order,timestamp_utc";

const SNAPSHOT_MAGIC: &[u8; 4] = b"ASNS";
const SNAPSHOT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("unknown track {0:?}")]
    UnknownTrack(String),
    #[error("class {0:?} is not part of the track's scheme")]
    UnknownClass(String),
    #[error("this track does not allow erroneous labels")]
    ErroneousNotAllowed,
    #[error("sample {0} has not been reached in the annotation order")]
    OutOfOrderLabel(usize),
    #[error("session already holds its full budget of labels")]
    SessionComplete,
    #[error("sample index {idx} out of range for {n} samples")]
    IndexOutOfRange { idx: usize, n: usize },
    #[error("unknown sample id {0:?}")]
    UnknownSample(String),
    #[error("queue is empty")]
    EmptyQueue,
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("malformed event log line {line}: {message}")]
    EventLog { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorGroup {
    Expert,
    NonExpert,
}

impl AnnotatorGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            AnnotatorGroup::Expert => "expert",
            AnnotatorGroup::NonExpert => "non_expert",
        }
    }
}

impl fmt::Display for AnnotatorGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnnotatorGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "expert" => Ok(AnnotatorGroup::Expert),
            "non_expert" | "nonexpert" => Ok(AnnotatorGroup::NonExpert),
            _ => Err(format!("unknown annotator group {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelValue {
    Class(String),
    Erroneous,
}

impl LabelValue {
    pub fn class(&self) -> Option<&str> {
        match self {
            LabelValue::Class(c) => Some(c),
            LabelValue::Erroneous => None,
        }
    }

    pub fn is_erroneous(&self) -> bool {
        matches!(self, LabelValue::Erroneous)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub dataset_name: String,
    pub track: String,
    pub method: Method,
    pub budget: usize,
    pub seed: u64,
    pub annotator_id: String,
    pub annotator_group: AnnotatorGroup,
    #[serde(default)]
    pub metric: DistanceMetric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub value: LabelValue,
    /// 1-based position in first-labeling order.
    pub first_seq: usize,
    pub modified: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "index", rename_all = "snake_case")]
pub enum NavAction {
    Select(usize),
    Enqueue(usize),
    Next,
    Previous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Label {
        index: usize,
        value: LabelValue,
        at: DateTime<Utc>,
    },
    Navigate { action: NavAction },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSession {
    config: SessionConfig,
    scheme: ClassScheme,
    order: SampleOrder,
    /// Sample ids of the whole dataset, indexed by global index.
    sample_ids: Vec<String>,
    visited: Vec<usize>,
    cursor: Option<usize>,
    /// Next unvisited position in `order` (RND/FAFT).
    pending: usize,
    queue: VecDeque<usize>,
    labels: BTreeMap<usize, LabelEntry>,
    events: Vec<SessionEvent>,
}

pub fn create_session(dataset: &Dataset, cfg: SessionConfig) -> Result<AnnotationSession, SessionError> {
    let scheme = dataset
        .scheme(&cfg.track)
        .cloned()
        .ok_or_else(|| SessionError::UnknownTrack(cfg.track.clone()))?;
    let n = dataset.len();
    let order = match cfg.method {
        Method::Random => sampling::sample_random(n, cfg.budget, cfg.seed)?,
        Method::Faft => sampling::sample_faft(&dataset.features, cfg.budget, cfg.seed, cfg.metric)?,
        Method::TwoDv => {
            if cfg.budget == 0 {
                return Err(SamplingError::ZeroBudget.into());
            }
            if cfg.budget > n {
                return Err(SamplingError::BudgetExceedsPopulation {
                    budget: cfg.budget,
                    n_total: n,
                }
                .into());
            }
            SampleOrder {
                method: Method::TwoDv,
                order: Vec::new(),
                seed: cfg.seed,
                metric: None,
            }
        }
    };
    AnnotationSession::from_parts(cfg, scheme, order, dataset.sample_ids())
}

impl AnnotationSession {
    /// Builds a session over an explicit order. For RND/FAFT the order must
    /// have exactly `budget` unique in-range entries; for 2DV it must be empty.
    pub fn from_parts(
        config: SessionConfig,
        scheme: ClassScheme,
        order: SampleOrder,
        sample_ids: Vec<String>,
    ) -> Result<Self, SessionError> {
        let n = sample_ids.len();
        if config.budget > n {
            return Err(SamplingError::BudgetExceedsPopulation {
                budget: config.budget,
                n_total: n,
            }
            .into());
        }
        if let Some(&bad) = order.order.iter().find(|&&i| i >= n) {
            return Err(SessionError::IndexOutOfRange { idx: bad, n });
        }
        let guided = config.method != Method::TwoDv;
        if guided && order.order.len() != config.budget {
            return Err(SessionError::InvalidAction(format!(
                "order length {} differs from budget {}",
                order.order.len(),
                config.budget
            )));
        }
        let mut s = AnnotationSession {
            config,
            scheme,
            order,
            sample_ids,
            visited: Vec::new(),
            cursor: None,
            pending: 0,
            queue: VecDeque::new(),
            labels: BTreeMap::new(),
            events: Vec::new(),
        };
        if guided {
            s.visited.push(s.order.order[0]);
            s.cursor = Some(0);
            s.pending = 1;
        }
        Ok(s)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn scheme(&self) -> &ClassScheme {
        &self.scheme
    }

    pub fn order(&self) -> &SampleOrder {
        &self.order
    }

    pub fn sample_id(&self, idx: usize) -> Option<&str> {
        self.sample_ids.get(idx).map(String::as_str)
    }

    pub fn index_of(&self, sample_id: &str) -> Option<usize> {
        self.sample_ids.iter().position(|s| s == sample_id)
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn budget(&self) -> usize {
        self.config.budget
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.len()
    }

    pub fn status(&self) -> SessionStatus {
        if self.labels.len() >= self.config.budget {
            SessionStatus::Complete
        } else {
            SessionStatus::Active
        }
    }

    pub fn current(&self) -> Option<usize> {
        self.cursor.map(|c| self.visited[c])
    }

    pub fn visited(&self) -> &[usize] {
        &self.visited
    }

    pub fn queue(&self) -> impl Iterator<Item = usize> + '_ {
        self.queue.iter().copied()
    }

    pub fn labels(&self) -> &BTreeMap<usize, LabelEntry> {
        &self.labels
    }

    pub fn label_of(&self, idx: usize) -> Option<&LabelValue> {
        self.labels.get(&idx).map(|e| &e.value)
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    /// Labels in first-labeling order.
    pub fn labels_in_order(&self) -> Vec<(usize, &LabelEntry)> {
        let mut v: Vec<_> = self.labels.iter().map(|(i, e)| (*i, e)).collect();
        v.sort_by_key(|(_, e)| e.first_seq);
        v
    }

    fn is_guided(&self) -> bool {
        self.config.method != Method::TwoDv
    }

    fn check_index(&self, idx: usize) -> Result<(), SessionError> {
        if idx >= self.sample_ids.len() {
            return Err(SessionError::IndexOutOfRange {
                idx,
                n: self.sample_ids.len(),
            });
        }
        Ok(())
    }

    pub fn assign_label(&mut self, idx: usize, value: LabelValue) -> Result<usize, SessionError> {
        self.assign_label_at(idx, value, Utc::now())
    }

    /// Records a label and returns the labeled count afterwards. First-time
    /// labels on the current RND/FAFT sample advance to the next one.
    pub fn assign_label_at(&mut self, idx: usize, value: LabelValue, at: DateTime<Utc>) -> Result<usize, SessionError> {
        self.check_index(idx)?;
        match &value {
            LabelValue::Class(c) if !self.scheme.contains(c) => return Err(SessionError::UnknownClass(c.clone())),
            LabelValue::Erroneous if !self.scheme.allows_erroneous => return Err(SessionError::ErroneousNotAllowed),
            _ => {}
        }
        let revision = self.labels.contains_key(&idx);
        if !revision && self.status() == SessionStatus::Complete {
            return Err(SessionError::SessionComplete);
        }
        let visited = self.visited.contains(&idx);
        if self.is_guided() && !visited {
            return Err(SessionError::OutOfOrderLabel(idx));
        }
        if !visited {
            // 2DV: labeling an unseen point selects it
            self.select(idx);
        }

        if let Some(entry) = self.labels.get_mut(&idx) {
            entry.value = value.clone();
            entry.modified = at;
        } else {
            let first_seq = self.labels.values().map(|e| e.first_seq).max().unwrap_or(0) + 1;
            self.labels.insert(
                idx,
                LabelEntry {
                    value: value.clone(),
                    first_seq,
                    modified: at,
                },
            );
            if self.is_guided() && self.current() == Some(idx) {
                self.advance();
            }
        }
        self.events.push(SessionEvent::Label { index: idx, value, at });
        Ok(self.labels.len())
    }

    fn select(&mut self, idx: usize) {
        self.queue.retain(|&q| q != idx);
        self.visited.push(idx);
        self.cursor = Some(self.visited.len() - 1);
    }

    /// RND/FAFT: step forward in history, or reveal the next order element.
    fn advance(&mut self) {
        let Some(c) = self.cursor else { return };
        if c + 1 < self.visited.len() {
            self.cursor = Some(c + 1);
        } else if self.pending < self.order.order.len() {
            self.visited.push(self.order.order[self.pending]);
            self.pending += 1;
            self.cursor = Some(c + 1);
        }
    }

    pub fn navigate(&mut self, action: NavAction) -> Result<Option<usize>, SessionError> {
        match action {
            NavAction::Select(idx) | NavAction::Enqueue(idx) => {
                if self.is_guided() {
                    return Err(SessionError::InvalidAction(format!(
                        "free selection is not available for {} sessions",
                        self.config.method
                    )));
                }
                self.check_index(idx)?;
                if let NavAction::Select(_) = action {
                    self.select(idx);
                } else if !self.queue.contains(&idx) {
                    self.queue.push_back(idx);
                }
            }
            NavAction::Next => {
                if self.is_guided() {
                    self.advance();
                } else {
                    let head = self.queue.pop_front().ok_or(SessionError::EmptyQueue)?;
                    self.select(head);
                }
            }
            NavAction::Previous => {
                if let Some(c) = self.cursor {
                    self.cursor = Some(c.saturating_sub(1));
                }
            }
        }
        self.events.push(SessionEvent::Navigate { action });
        Ok(self.current())
    }

    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), SessionError> {
        match event {
            SessionEvent::Label { index, value, at } => self.assign_label_at(*index, value.clone(), *at).map(|_| ()),
            SessionEvent::Navigate { action } => self.navigate(*action).map(|_| ()),
        }
    }

    /// Line-delimited JSON, one event per line.
    pub fn event_log(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn replay(&mut self, log: &str) -> Result<(), SessionError> {
        for (line_no, line) in log.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event: SessionEvent = serde_json::from_str(line).map_err(|e| SessionError::EventLog {
                line: line_no + 1,
                message: e.to_string(),
            })?;
            self.apply(&event)?;
        }
        Ok(())
    }

    /// Versioned, checksummed container: magic, `u16` version, `u64` payload
    /// length, JSON payload, SHA-256 of the payload.
    pub fn save(&self) -> Vec<u8> {
        let payload = serde_json::to_vec(self).expect("session serializes");
        let mut out = Vec::with_capacity(payload.len() + 46);
        out.extend_from_slice(SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        out
    }

    pub fn load(bytes: &[u8]) -> Result<Self, SessionError> {
        let corrupt = |m: &str| SessionError::CorruptSnapshot(m.to_string());
        if bytes.len() < 14 {
            return Err(corrupt("truncated header"));
        }
        if &bytes[..4] != SNAPSHOT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SNAPSHOT_VERSION {
            return Err(SessionError::CorruptSnapshot(format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
        let body = &bytes[14..];
        if body.len() != len + 32 {
            return Err(corrupt("length mismatch"));
        }
        let (payload, digest) = body.split_at(len);
        if Sha256::digest(payload).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let s: AnnotationSession =
            serde_json::from_slice(payload).map_err(|e| SessionError::CorruptSnapshot(e.to_string()))?;
        s.check_consistency()?;
        Ok(s)
    }

    fn check_consistency(&self) -> Result<(), SessionError> {
        let bad = |m: &str| Err(SessionError::CorruptSnapshot(m.to_string()));
        if self.labels.len() > self.config.budget {
            return bad("more labels than budget");
        }
        if self.cursor.is_some_and(|c| c >= self.visited.len()) {
            return bad("cursor beyond history");
        }
        if self.labels.keys().any(|i| !self.visited.contains(i)) {
            return bad("labeled sample missing from history");
        }
        Ok(())
    }

    /// CSV export in first-labeling order: RFC 4180 quoting, LF endings.
    pub fn export_csv(&self) -> Vec<u8> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .quote_style(csv::QuoteStyle::Necessary)
            .from_writer(Vec::new());
        wtr.write_record(CSV_HEADER.split(',')).expect("in-memory write");
        for (idx, entry) in self.labels_in_order() {
            let (label, erroneous) = match &entry.value {
                LabelValue::Class(c) => (c.as_str(), "false"),
                LabelValue::Erroneous => ("", "true"),
            };
            wtr.write_record([
                self.sample_ids[idx].as_str(),
                &self.config.track,
                self.config.method.as_str(),
                &self.config.annotator_id,
                self.config.annotator_group.as_str(),
                label,
                erroneous,
                &entry.first_seq.to_string(),
                &format_timestamp(&entry.modified),
            ])
            .expect("in-memory write");
        }
        wtr.into_inner().expect("in-memory flush")
    }
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// One row of an exported annotation CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub track: String,
    pub method: String,
    pub annotator_id: String,
    pub annotator_group: String,
    pub label: String,
    pub is_erroneous: bool,
    pub annotation_order: usize,
    pub timestamp_utc: String,
}

impl AnnotationRecord {
    pub fn value(&self) -> LabelValue {
        if self.is_erroneous {
            LabelValue::Erroneous
        } else {
            LabelValue::Class(self.label.clone())
        }
    }
}

/// Parses an exported CSV; rows come back sorted by `annotation_order`.
pub fn read_export_csv(bytes: &[u8]) -> Result<Vec<AnnotationRecord>, csv::Error> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let mut rows = rdr.deserialize().collect::<Result<Vec<AnnotationRecord>, _>>()?;
    rows.sort_by_key(|r| r.annotation_order);
    Ok(rows)
}
