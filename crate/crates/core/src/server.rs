//! HTTP API over one dataset: projections, annotation sessions, media and
//! analysis. Mutations on a session are serialized by a per-session lock and
//! each one answers with the updated labeled count.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::{Mutex, RwLock};
use tower_http::services::ServeFile;

use crate::analysis::{self, AnalysisError, AnnotatorLabels};
use crate::dataset::{ingest_dataset, Dataset, DatasetError, MediaKind};
use crate::eval::{EvalError, EvalProtocol};
use crate::labels::{histogram_report_tsv, LabelError};
use crate::plot::{histogram_chart_svg, learning_curve_svg, BarSeries};
use crate::projection::{
    compute_pca, compute_tsne_with, JobControl, Projection2D, ProjectionError, ProjectionRegistry, TsneConfig,
};
use crate::risk::{render_tsv, GroupScope, RiskError, DEFAULT_RARE_THRESHOLD};
use crate::sampling::{Method, SamplingError};
use crate::session::{create_session, AnnotationSession, LabelValue, NavAction, SessionConfig, SessionError};

pub const SNAPSHOT_EXT: &str = "asns";

/// Error body: `{"kind": ..., "message": ...}` with a matching status code.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, kind, message: message.into() }
    }

    fn not_found(kind: &'static str, what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, kind, format!("{what} not found"))
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "kind": self.kind, "message": self.message }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<SamplingError> for ApiError {
    fn from(e: SamplingError) -> Self {
        let kind = match e {
            SamplingError::BudgetExceedsPopulation { .. } => "BudgetExceedsPopulation",
            SamplingError::ZeroBudget => "ZeroBudget",
            SamplingError::LengthMismatch(..) => "LengthMismatch",
            SamplingError::FirstPickOutOfRange { .. } => "FirstPickOutOfRange",
        };
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, kind, e.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        use SessionError::*;
        let unprocessable = StatusCode::UNPROCESSABLE_ENTITY;
        let (status, kind) = match &e {
            Sampling(s) => return s.clone().into(),
            UnknownTrack(_) => (unprocessable, "UnknownTrack"),
            UnknownClass(_) => (unprocessable, "UnknownClass"),
            ErroneousNotAllowed => (unprocessable, "ErroneousNotAllowed"),
            OutOfOrderLabel(_) => (StatusCode::CONFLICT, "OutOfOrderLabel"),
            SessionComplete => (StatusCode::CONFLICT, "SessionComplete"),
            IndexOutOfRange { .. } => (unprocessable, "IndexOutOfRange"),
            UnknownSample(_) => (StatusCode::NOT_FOUND, "UnknownSample"),
            EmptyQueue => (StatusCode::CONFLICT, "EmptyQueue"),
            InvalidAction(_) => (unprocessable, "InvalidAction"),
            CorruptSnapshot(_) => (StatusCode::INTERNAL_SERVER_ERROR, "CorruptSnapshot"),
            EventLog { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "EventLog"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

impl From<ProjectionError> for ApiError {
    fn from(e: ProjectionError) -> Self {
        use ProjectionError::*;
        let unprocessable = StatusCode::UNPROCESSABLE_ENTITY;
        let (status, kind) = match &e {
            DegenerateInput(_) => (unprocessable, "DegenerateInput"),
            InvalidConfig(_) => (unprocessable, "InvalidConfig"),
            CalibrationFailure { .. } => (unprocessable, "CalibrationFailure"),
            ShapeMismatch { .. } => (unprocessable, "ShapeMismatch"),
            NonFiniteCoordinate { .. } => (unprocessable, "NonFiniteCoordinate"),
            DuplicateName(_) => (StatusCode::CONFLICT, "DuplicateName"),
            UnknownProjection(_) => (StatusCode::NOT_FOUND, "UnknownProjection"),
            Cancelled => (StatusCode::CONFLICT, "Cancelled"),
            Read(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Read"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

impl From<LabelError> for ApiError {
    fn from(e: LabelError) -> Self {
        use LabelError::*;
        let kind = match &e {
            UnmappedClass(_) => "UnmappedClass",
            InvalidRemap(_) => "InvalidRemap",
            UnknownClass(_) => "UnknownClass",
            EmptyLabelSet => "EmptyLabelSet",
            SchemeMismatch(..) => "SchemeMismatch",
            TooFewHistograms(_) => "TooFewHistograms",
        };
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, kind, e.to_string())
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        use EvalError::*;
        let kind = match &e {
            Session(s) => return s.clone().into(),
            EmptyTrainingSet => "EmptyTrainingSet",
            EmptyTestSet => "EmptyTestSet",
            CheckpointExceedsLabels { .. } => "CheckpointExceedsLabels",
            InvalidProtocol(_) => "InvalidProtocol",
            MissingGroundTruth(_) => "MissingGroundTruth",
            UnknownTrack(_) => "UnknownTrack",
            UnknownSample(_) => "UnknownSample",
            UnknownClass(_) => "UnknownClass",
            TestSetLeak(_) => return ApiError::internal(e.to_string()),
            InvalidSimulation(_) => "InvalidSimulation",
        };
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, kind, e.to_string())
    }
}

impl From<RiskError> for ApiError {
    fn from(e: RiskError) -> Self {
        use RiskError::*;
        let kind = match &e {
            Label(l) => return l.clone().into(),
            EmptyInput => "EmptyInput",
            InvalidPerformance(_) => "InvalidPerformance",
            NoRareClass { .. } => "NoRareClass",
            IncompleteRankTable(_) => "IncompleteRankTable",
            MetricNotApplicable(_) => "MetricNotApplicable",
            MissingMethod { .. } => "MissingMethod",
        };
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, kind, e.to_string())
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Label(l) => l.into(),
            AnalysisError::Eval(v) => v.into(),
            AnalysisError::Risk(r) => r.into(),
            AnalysisError::UnknownTrack(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "UnknownTrack", e.to_string()),
            AnalysisError::MissingGroundTruth(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "MissingGroundTruth", e.to_string())
            }
            AnalysisError::NoAnnotations(_) => ApiError::new(StatusCode::NOT_FOUND, "NoAnnotations", e.to_string()),
            AnalysisError::UnknownMethod(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "UnknownMethod", e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Done,
    Failed,
}

/// Background projection job with progress reporting and a cancel flag.
pub struct Job {
    pub name: String,
    progress: AtomicU64,
    cancel: AtomicBool,
    outcome: std::sync::Mutex<(JobStatus, Option<ApiError>)>,
}

impl JobControl for Job {
    fn report(&self, fraction: f64) {
        self.progress.store(fraction.to_bits(), Ordering::Relaxed);
    }

    fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::Relaxed)
    }
}

impl Job {
    fn new(name: String) -> Self {
        Job {
            name,
            progress: AtomicU64::new(0f64.to_bits()),
            cancel: AtomicBool::new(false),
            outcome: std::sync::Mutex::new((JobStatus::Running, None)),
        }
    }

    pub fn progress(&self) -> f64 {
        f64::from_bits(self.progress.load(Ordering::Relaxed))
    }

    pub fn cancel(&self) {
        self.cancel.store(true, Ordering::Relaxed);
    }

    pub fn status(&self) -> JobStatus {
        self.outcome.lock().unwrap().0
    }
}

pub struct AppState {
    pub dataset: Arc<Dataset>,
    pub projections: RwLock<ProjectionRegistry>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<AnnotationSession>>>>,
    jobs: RwLock<BTreeMap<u64, Arc<Job>>>,
    next_job: AtomicU64,
    next_session: AtomicU64,
    store: Option<PathBuf>,
}

/// PCA plus every projection listed in the dataset manifest.
pub fn initial_projections(dataset: &Dataset) -> Result<ProjectionRegistry, ProjectionError> {
    let mut reg = ProjectionRegistry::new();
    reg.insert(compute_pca(&dataset.features)?.projection)?;
    for p in &dataset.projections {
        reg.import_projection(&p.name, &dataset.root.join(&p.path), dataset.len())?;
    }
    Ok(reg)
}

impl AppState {
    /// Loads sessions for this dataset from `store` when given; sessions are
    /// persisted there after every mutation and on [`AppState::flush`].
    pub fn new(dataset: Dataset, registry: ProjectionRegistry, store: Option<PathBuf>) -> Result<Self, ServeError> {
        let mut sessions = BTreeMap::new();
        let mut max_id = 0u64;
        if let Some(dir) = &store {
            std::fs::create_dir_all(dir).map_err(|e| ServeError::Store(dir.clone(), e))?;
            let entries = std::fs::read_dir(dir).map_err(|e| ServeError::Store(dir.clone(), e))?;
            let mut paths: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == SNAPSHOT_EXT))
                .collect();
            paths.sort();
            for p in paths {
                let bytes = std::fs::read(&p).map_err(|e| ServeError::Store(p.clone(), e))?;
                let s = match AnnotationSession::load(&bytes) {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("skipping {}: {e}", p.display());
                        continue;
                    }
                };
                if s.config().dataset_name != dataset.name {
                    continue;
                }
                let id = p.file_stem().unwrap().to_string_lossy().to_string();
                if let Some(n) = id.strip_prefix("s").and_then(|n| n.parse::<u64>().ok()) {
                    max_id = max_id.max(n);
                }
                sessions.insert(id, Arc::new(Mutex::new(s)));
            }
        }
        Ok(AppState {
            dataset: Arc::new(dataset),
            projections: RwLock::new(registry),
            sessions: RwLock::new(sessions),
            jobs: RwLock::new(BTreeMap::new()),
            next_job: AtomicU64::new(1),
            next_session: AtomicU64::new(max_id + 1),
            store,
        })
    }

    fn persist(&self, id: &str, s: &AnnotationSession) -> ApiResult<()> {
        if let Some(dir) = &self.store {
            let path = dir.join(format!("{id}.{SNAPSHOT_EXT}"));
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, s.save())
                .and_then(|_| std::fs::rename(&tmp, &path))
                .map_err(|e| ApiError::internal(format!("cannot persist session {id}: {e}")))?;
        }
        Ok(())
    }

    /// Writes every session snapshot to the store.
    pub async fn flush(&self) -> ApiResult<usize> {
        let sessions = self.sessions.read().await;
        for (id, s) in sessions.iter() {
            self.persist(id, &*s.lock().await)?;
        }
        Ok(sessions.len())
    }

    pub async fn session_ids(&self) -> Vec<String> {
        self.sessions.read().await.keys().cloned().collect()
    }

    async fn session(&self, id: &str) -> ApiResult<Arc<Mutex<AnnotationSession>>> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("UnknownSession", &format!("session {id:?}")))
    }

    async fn annotators(&self) -> Vec<AnnotatorLabels> {
        let sessions: Vec<_> = self.sessions.read().await.values().cloned().collect();
        let mut out = Vec::with_capacity(sessions.len());
        for s in sessions {
            out.push(AnnotatorLabels::from_session(&*s.lock().await));
        }
        out
    }

    fn sample_index(&self, sample_id: &str) -> ApiResult<usize> {
        self.dataset
            .index_of(sample_id)
            .ok_or_else(|| SessionError::UnknownSample(sample_id.to_string()).into())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/dataset", get(get_dataset))
        .route("/api/projections", get(list_projections))
        .route("/api/projections/{name}/coords", get(projection_coords))
        .route("/api/projections/tsne", post(start_tsne))
        .route("/api/jobs/{id}", get(get_job).delete(cancel_job))
        .route("/api/sessions", get(list_sessions).post(create_session_handler))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/labels", post(post_label))
        .route("/api/sessions/{id}/queue", post(post_queue))
        .route("/api/sessions/{id}/navigate", post(post_navigate))
        .route("/api/sessions/{id}/export.csv", get(export_csv))
        .route("/media/{sample_id}/{kind}", get(get_media))
        .route("/api/analysis/histograms", get(analysis_histograms))
        .route("/api/analysis/risk", get(analysis_risk))
        .route("/api/analysis/curve", get(analysis_curve))
        .with_state(state)
}

async fn get_dataset(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let ds = &st.dataset;
    Json(json!({
        "name": ds.name,
        "n_samples": ds.len(),
        "n_dims": ds.features.n_dims(),
        "schemes": ds.schemes,
        "samples": ds.samples,
        "tracks_with_ground_truth": ds.ground_truth.keys().collect::<Vec<_>>(),
        "warnings": ds.warnings,
    }))
}

async fn list_projections(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let reg = st.projections.read().await;
    let list: Vec<_> = reg
        .names()
        .into_iter()
        .map(|n| {
            let p = reg.get(&n).unwrap();
            json!({ "name": n, "n_points": p.len(), "provenance": p.provenance })
        })
        .collect();
    Json(json!(list))
}

async fn projection_coords(State(st): State<Arc<AppState>>, UrlPath(name): UrlPath<String>) -> ApiResult<Response> {
    let p = st
        .projections
        .read()
        .await
        .get(&name)
        .ok_or(ProjectionError::UnknownProjection(name))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], p.to_bytes()).into_response())
}

#[derive(Debug, Deserialize)]
struct TsneRequest {
    name: String,
    #[serde(default)]
    config: TsneConfig,
}

async fn start_tsne(
    State(st): State<Arc<AppState>>,
    body: Result<Json<TsneRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    if st.projections.read().await.contains(&req.name) {
        return Err(ProjectionError::DuplicateName(req.name).into());
    }
    req.config.validate(st.dataset.len())?;
    let id = st.next_job.fetch_add(1, Ordering::Relaxed);
    let job = Arc::new(Job::new(req.name.clone()));
    st.jobs.write().await.insert(id, job.clone());

    let state = st.clone();
    tokio::spawn(async move {
        let ds = state.dataset.clone();
        let j = job.clone();
        let cfg = req.config;
        let result = tokio::task::spawn_blocking(move || compute_tsne_with(&ds.features, &cfg, &*j)).await;
        let outcome = match result {
            Ok(Ok(mut p)) => {
                p.name = job.name.clone();
                match state.projections.write().await.insert(p) {
                    Ok(_) => (JobStatus::Done, None),
                    Err(e) => (JobStatus::Failed, Some(e.into())),
                }
            }
            Ok(Err(e)) => (JobStatus::Failed, Some(ApiError::from(e))),
            Err(e) => (JobStatus::Failed, Some(ApiError::internal(e.to_string()))),
        };
        *job.outcome.lock().unwrap() = outcome;
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": id, "name": req.name }))).into_response())
}

async fn job_view(st: &AppState, id: u64) -> ApiResult<Json<serde_json::Value>> {
    let job = st
        .jobs
        .read()
        .await
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("UnknownJob", &format!("job {id}")))?;
    let (status, err) = job.outcome.lock().unwrap().clone();
    Ok(Json(json!({
        "job_id": id,
        "name": job.name,
        "status": status,
        "progress": job.progress(),
        "error": err.map(|e| json!({ "kind": e.kind, "message": e.message })),
    })))
}

async fn get_job(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<serde_json::Value>> {
    job_view(&st, id).await
}

async fn cancel_job(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<u64>) -> ApiResult<Json<serde_json::Value>> {
    if let Some(j) = st.jobs.read().await.get(&id) {
        j.cancel();
    }
    job_view(&st, id).await
}

#[derive(Debug, Serialize)]
struct CurrentView {
    index: usize,
    sample_id: String,
}

fn current_view(s: &AnnotationSession) -> Option<CurrentView> {
    s.current().map(|i| CurrentView {
        index: i,
        sample_id: s.sample_id(i).unwrap_or_default().to_string(),
    })
}

fn mutation_view(s: &AnnotationSession) -> serde_json::Value {
    json!({
        "labeled_count": s.labeled_count(),
        "budget": s.budget(),
        "status": s.status(),
        "current": current_view(s),
        "queue": s.queue().map(|i| s.sample_id(i).unwrap_or_default().to_string()).collect::<Vec<_>>(),
    })
}

fn session_view(id: &str, s: &AnnotationSession) -> serde_json::Value {
    let labels: Vec<_> = s
        .labels_in_order()
        .into_iter()
        .map(|(i, e)| {
            json!({
                "sample_id": s.sample_id(i),
                "index": i,
                "label": e.value.class(),
                "erroneous": e.value.is_erroneous(),
                "order": e.first_seq,
                "modified": crate::session::format_timestamp(&e.modified),
            })
        })
        .collect();
    let mut v = mutation_view(s);
    let obj = v.as_object_mut().unwrap();
    obj.insert("id".into(), json!(id));
    obj.insert("config".into(), json!(s.config()));
    obj.insert("scheme".into(), json!(s.scheme()));
    obj.insert(
        "history".into(),
        json!(s.visited().iter().map(|&i| s.sample_id(i)).collect::<Vec<_>>()),
    );
    obj.insert("labels".into(), json!(labels));
    v
}

async fn list_sessions(State(st): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let sessions: Vec<_> = st.sessions.read().await.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let mut out = Vec::new();
    for (id, s) in sessions {
        let s = s.lock().await;
        out.push(json!({ "id": id, "config": s.config(), "labeled_count": s.labeled_count(), "status": s.status() }));
    }
    Json(json!(out))
}

async fn create_session_handler(
    State(st): State<Arc<AppState>>,
    body: Result<Json<SessionConfig>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(mut cfg) = body?;
    if cfg.dataset_name.is_empty() {
        cfg.dataset_name = st.dataset.name.clone();
    } else if cfg.dataset_name != st.dataset.name {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "UnknownDataset",
            format!("this server hosts dataset {:?}", st.dataset.name),
        ));
    }
    let ds = st.dataset.clone();
    let session = tokio::task::spawn_blocking(move || create_session(&ds, cfg))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let id = format!("s{:04}", st.next_session.fetch_add(1, Ordering::Relaxed));
    st.persist(&id, &session)?;
    let view = session_view(&id, &session);
    st.sessions.write().await.insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<serde_json::Value>> {
    let s = st.session(&id).await?;
    let s = s.lock().await;
    Ok(Json(session_view(&id, &s)))
}

#[derive(Debug, Deserialize)]
struct LabelRequest {
    sample_id: String,
    #[serde(default)]
    value: Option<String>,
    #[serde(default)]
    erroneous: bool,
}

async fn post_label(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(req) = body?;
    let value = match (req.erroneous, req.value) {
        (true, _) => LabelValue::Erroneous,
        (false, Some(v)) => LabelValue::Class(v),
        (false, None) => return Err(ApiError::bad_request("either value or erroneous=true is required")),
    };
    let idx = st.sample_index(&req.sample_id)?;
    let s = st.session(&id).await?;
    let mut s = s.lock().await;
    s.assign_label(idx, value)?;
    st.persist(&id, &s)?;
    Ok(Json(mutation_view(&s)))
}

#[derive(Debug, Deserialize)]
struct QueueRequest {
    sample_id: String,
}

async fn post_queue(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<QueueRequest>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(req) = body?;
    let idx = st.sample_index(&req.sample_id)?;
    let s = st.session(&id).await?;
    let mut s = s.lock().await;
    s.navigate(NavAction::Enqueue(idx))?;
    st.persist(&id, &s)?;
    Ok(Json(mutation_view(&s)))
}

#[derive(Debug, Deserialize)]
struct NavigateRequest {
    action: String,
    #[serde(default)]
    sample_id: Option<String>,
}

async fn post_navigate(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<NavigateRequest>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(req) = body?;
    let target = |st: &AppState| -> ApiResult<usize> {
        let sid = req
            .sample_id
            .as_deref()
            .ok_or_else(|| ApiError::bad_request(format!("action {:?} needs sample_id", req.action)))?;
        st.sample_index(sid)
    };
    let action = match req.action.as_str() {
        "next" => NavAction::Next,
        "previous" | "prev" => NavAction::Previous,
        "select" => NavAction::Select(target(&st)?),
        "enqueue" => NavAction::Enqueue(target(&st)?),
        other => return Err(SessionError::InvalidAction(other.to_string()).into()),
    };
    let s = st.session(&id).await?;
    let mut s = s.lock().await;
    s.navigate(action)?;
    st.persist(&id, &s)?;
    Ok(Json(mutation_view(&s)))
}

async fn export_csv(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let s = st.session(&id).await?;
    let csv = s.lock().await.export_csv();
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn get_media(
    State(st): State<Arc<AppState>>,
    UrlPath((sample_id, kind)): UrlPath<(String, String)>,
    req: Request,
) -> ApiResult<Response> {
    let idx = st.sample_index(&sample_id)?;
    let kind: MediaKind = kind
        .parse()
        .map_err(|_| ApiError::not_found("UnknownMediaKind", &format!("media kind {kind:?}")))?;
    let media = st.dataset.samples[idx]
        .media
        .iter()
        .find(|m| m.kind == kind)
        .ok_or_else(|| ApiError::not_found("MissingMedia", &format!("{} media for {sample_id:?}", kind.as_str())))?;
    let path = st.dataset.root.join(&media.uri);
    let resp = ServeFile::new(path)
        .try_call(req)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(resp.map(Body::new))
}

fn default_scope() -> String {
    "all".into()
}

fn parse_scope(s: &str) -> ApiResult<GroupScope> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "all" => Ok(GroupScope::All),
        "expert" => Ok(GroupScope::Expert),
        "non_expert" | "nonexpert" => Ok(GroupScope::NonExpert),
        other => Err(ApiError::bad_request(format!("unknown annotator group {other:?}"))),
    }
}

#[derive(Debug, Deserialize)]
struct HistogramQuery {
    track: String,
    #[serde(default = "default_scope")]
    group: String,
    #[serde(default)]
    format: Option<String>,
}

async fn analysis_histograms(
    State(st): State<Arc<AppState>>,
    Query(q): Query<HistogramQuery>,
) -> ApiResult<Response> {
    let scope = parse_scope(&q.group)?;
    let annotators = st.annotators().await;
    let ds = &st.dataset;
    let scheme = ds
        .scheme(&q.track)
        .ok_or_else(|| AnalysisError::UnknownTrack(q.track.clone()))?;
    let groups = analysis::method_histograms(scheme, &annotators, scope)?;
    let reference = analysis::reference_histogram(ds, &q.track).ok();
    match q.format.as_deref() {
        Some("tsv") => {
            let body = histogram_report_tsv(scheme, &groups)?;
            Ok(([(header::CONTENT_TYPE, "text/tab-separated-values")], body).into_response())
        }
        Some("svg") => {
            let ref_stats = reference.as_ref().map(|r| crate::labels::GroupStats {
                mean: r.proportions.clone(),
                sd: vec![0.0; r.proportions.len()],
            });
            let stats = groups.iter().map(|g| g.stats()).collect::<Result<Vec<_>, _>>()?;
            let mut series = Vec::new();
            if let Some(r) = &ref_stats {
                series.push(BarSeries { name: "Reference", stats: r });
            }
            for (g, s) in groups.iter().zip(&stats) {
                series.push(BarSeries { name: &g.name, stats: s });
            }
            Ok(([(header::CONTENT_TYPE, "image/svg+xml")], histogram_chart_svg(scheme, &series)).into_response())
        }
        None | Some("json") => {
            let mut out = Vec::new();
            for g in &groups {
                let stats = g.stats()?;
                out.push(json!({
                    "method": g.name,
                    "annotators": g.annotators,
                    "per_annotator": g.histograms.iter().map(|h| &h.proportions).collect::<Vec<_>>(),
                    "mean": stats.mean,
                    "sd": stats.sd,
                }));
            }
            Ok(Json(json!({
                "track": q.track,
                "classes": scheme.class_ids().collect::<Vec<_>>(),
                "reference": reference.map(|r| r.proportions),
                "groups": out,
            }))
            .into_response())
        }
        Some(other) => Err(ApiError::bad_request(format!("unknown format {other:?}"))),
    }
}

#[derive(Debug, Deserialize)]
struct CurveQuery {
    track: String,
    method: String,
    #[serde(default)]
    merge: bool,
    #[serde(default = "default_scope")]
    group: String,
    #[serde(default)]
    checkpoints: Option<String>,
    #[serde(default)]
    repeats: Option<usize>,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    format: Option<String>,
}

fn parse_checkpoints(s: &str) -> ApiResult<Vec<usize>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<usize>().map_err(|_| ApiError::bad_request(format!("bad checkpoint {t:?}"))))
        .collect()
}

fn protocol_for(
    annotators: &[&AnnotatorLabels],
    checkpoints: Option<&str>,
    repeats: Option<usize>,
    k: Option<usize>,
    seed: Option<u64>,
) -> ApiResult<EvalProtocol> {
    let available = annotators.iter().map(|a| a.labels.len()).min().unwrap_or(0);
    let mut p = EvalProtocol::with_budget(available.max(1));
    if let Some(c) = checkpoints {
        p.checkpoints = parse_checkpoints(c)?;
    }
    if let Some(r) = repeats {
        p.n_repeats = r;
    }
    if let Some(k) = k {
        p.k = k;
    }
    if let Some(s) = seed {
        p.seed = s;
    }
    Ok(p)
}

async fn analysis_curve(State(st): State<Arc<AppState>>, Query(q): Query<CurveQuery>) -> ApiResult<Response> {
    let method: Method = q.method.parse().map_err(|_| AnalysisError::UnknownMethod(q.method.clone()))?;
    let scope = parse_scope(&q.group)?;
    let annotators = st.annotators().await;
    let ds = st.dataset.clone();
    let result = tokio::task::spawn_blocking(move || -> ApiResult<_> {
        let grouped = analysis::by_method(&annotators, &q.track, scope);
        let list = grouped.get(&method).cloned().unwrap_or_default();
        let protocol = protocol_for(&list, q.checkpoints.as_deref(), q.repeats, q.k, q.seed)?;
        let curve = analysis::method_curve(&ds, &q.track, &list, &protocol, q.merge)?;
        Ok((curve, q.format, method))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    let (curve, format, method) = result;
    match format.as_deref() {
        Some("svg") => Ok((
            [(header::CONTENT_TYPE, "image/svg+xml")],
            learning_curve_svg(&[(method.as_str(), &curve)], None),
        )
            .into_response()),
        None | Some("json") => Ok(Json(json!({ "method": method, "points": curve.points })).into_response()),
        Some(other) => Err(ApiError::bad_request(format!("unknown format {other:?}"))),
    }
}

#[derive(Debug, Deserialize)]
struct RiskQuery {
    tracks: String,
    #[serde(default)]
    task: Option<String>,
    #[serde(default = "default_scope")]
    group: String,
    #[serde(default)]
    checkpoints: Option<String>,
    #[serde(default)]
    repeats: Option<usize>,
    #[serde(default)]
    rare_threshold: Option<f64>,
    #[serde(default)]
    format: Option<String>,
}

async fn analysis_risk(State(st): State<Arc<AppState>>, Query(q): Query<RiskQuery>) -> ApiResult<Response> {
    let scope = parse_scope(&q.group)?;
    let annotators = st.annotators().await;
    let ds = st.dataset.clone();
    let report = tokio::task::spawn_blocking(move || -> ApiResult<_> {
        let tracks: Vec<&str> = q.tracks.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
        let refs: Vec<&AnnotatorLabels> = annotators.iter().filter(|a| tracks.contains(&a.track.as_str())).collect();
        let protocol = protocol_for(&refs, q.checkpoints.as_deref(), q.repeats, None, None)?;
        let task = q.task.clone().unwrap_or_else(|| tracks.join("+"));
        let report = analysis::risk_from_annotations(
            &ds,
            &task,
            &tracks,
            &annotators,
            scope,
            &protocol,
            q.rare_threshold.unwrap_or(DEFAULT_RARE_THRESHOLD),
        )?;
        Ok((report, q.format))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    let (report, format) = report;
    match format.as_deref() {
        Some("tsv") => Ok((
            [(header::CONTENT_TYPE, "text/tab-separated-values")],
            render_tsv(std::slice::from_ref(&report)),
        )
            .into_response()),
        None | Some("json") => Ok(Json(json!(report)).into_response()),
        Some(other) => Err(ApiError::bad_request(format!("unknown format {other:?}"))),
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {0}: {1}")]
    BindFailure(SocketAddr, std::io::Error),
    #[error("cannot ingest dataset: {0}")]
    IngestFailure(#[from] DatasetError),
    #[error("cannot compute projections: {0}")]
    Projection(#[from] ProjectionError),
    #[error("session store {0}: {1}")]
    Store(PathBuf, std::io::Error),
    #[error("server error: {0}")]
    Io(std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub bind: SocketAddr,
    pub dataset_root: PathBuf,
    pub store: PathBuf,
}

/// Builds the shared state for a dataset directory or manifest path.
pub fn load_state(dataset_root: &Path, store: Option<PathBuf>) -> Result<Arc<AppState>, ServeError> {
    let dataset = ingest_dataset(dataset_root)?;
    for w in &dataset.warnings {
        log::warn!("feature row {}: {}", w.row, w.defect);
    }
    let registry = initial_projections(&dataset)?;
    Ok(Arc::new(AppState::new(dataset, registry, store)?))
}

/// Runs until Ctrl-C or SIGTERM, then flushes every session to the store.
pub async fn serve(cfg: ServeConfig) -> Result<(), ServeError> {
    let state = load_state(&cfg.dataset_root, Some(cfg.store.clone()))?;
    let listener = tokio::net::TcpListener::bind(cfg.bind)
        .await
        .map_err(|e| ServeError::BindFailure(cfg.bind, e))?;
    let addr = listener.local_addr().map_err(ServeError::Io)?;
    log::info!("serving {} on http://{addr}", state.dataset.name);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(shutdown_signal())
        .await
        .map_err(ServeError::Io)?;
    let n = state
        .flush()
        .await
        .map_err(|e| ServeError::Store(cfg.store.clone(), std::io::Error::other(e.message)))?;
    log::info!("flushed {n} sessions");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        if let Ok(mut s) = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            s.recv().await;
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Projection lookup for callers outside the HTTP layer.
pub async fn projection(state: &AppState, name: &str) -> Option<Arc<Projection2D>> {
    state.projections.read().await.get(name)
}
