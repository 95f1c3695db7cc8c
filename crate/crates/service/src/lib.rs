//! HTTP service for taking a visual questionnaire.
//!
//! Endpoints:
//!
//! - `GET /api/questionnaire?version=` the questionnaire with opaque option tokens
//! - `POST /api/responses` score a complete set of tokens, journaled before replying
//! - `GET /images/{id}` option images from the images directory
//! - `GET /api/health`
//!
//! Scoring constants never leave the server.

pub mod journal;
pub mod view;

use std::collections::{BTreeMap, HashMap};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use axum::body::Body;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;
use vbfi_core::questionnaire::{load_manifest, score_response, Choice, QuestionnaireError};
use vbfi_core::{ResponseSheet, Trait};

pub use journal::Journal;
pub use view::{option_token, Published, QuestionnaireView, TokenTarget};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no questionnaire given")]
    NoQuestionnaire,
    #[error("questionnaire version `{0}` loaded twice")]
    DuplicateVersion(String),
    #[error(transparent)]
    Questionnaire(#[from] QuestionnaireError),
    #[error("{path}:{line}: {reason}")]
    Journal { path: String, line: usize, reason: String },
    #[error("invalid allowed origin `{0}`")]
    BadOrigin(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub host: IpAddr,
    pub port: u16,
    /// The first questionnaire is the default version.
    pub questionnaires: Vec<PathBuf>,
    pub images_dir: PathBuf,
    pub journal: PathBuf,
    pub allow_origin: Option<String>,
    /// Static files served under `/`, e.g. a built web UI.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8080,
            questionnaires: vec![PathBuf::from("questionnaire.json")],
            images_dir: PathBuf::from("images"),
            journal: PathBuf::from("responses.jsonl"),
            allow_origin: None,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub session_id: String,
    pub version_id: String,
    pub choices: BTreeMap<(Trait, usize), usize>,
    /// `None` when the version is not loaded.
    pub scores: Option<BTreeMap<Trait, f64>>,
    pub self_rating: Option<u8>,
    pub created_at: String,
    pub updated_at: String,
    pub completed: bool,
}

#[derive(Debug)]
pub struct AppState {
    pub versions: BTreeMap<String, Published>,
    pub default_version: String,
    pub images_dir: PathBuf,
    journal: Mutex<Journal>,
    sessions: RwLock<HashMap<String, SessionRecord>>,
    started: Instant,
}

impl AppState {
    pub fn load(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let mut versions = BTreeMap::new();
        let mut default_version = None;
        for path in &cfg.questionnaires {
            let q = load_manifest(path)?;
            let id = q.version_id.clone();
            default_version.get_or_insert_with(|| id.clone());
            if versions.insert(id.clone(), Published::new(q)).is_some() {
                return Err(ServiceError::DuplicateVersion(id));
            }
        }
        let default_version = default_version.ok_or(ServiceError::NoQuestionnaire)?;
        let (journal, rows) = Journal::open(&cfg.journal)?;
        let mut sessions = HashMap::new();
        for row in rows {
            index_row(&versions, &mut sessions, row);
        }
        log::info!(
            "loaded {} questionnaire version(s), {} journaled session(s)",
            versions.len(),
            sessions.len()
        );
        Ok(Self {
            versions,
            default_version,
            images_dir: cfg.images_dir.clone(),
            journal: Mutex::new(journal),
            sessions: RwLock::new(sessions),
            started: Instant::now(),
        })
    }

    pub fn session(&self, id: &str) -> Option<SessionRecord> {
        self.sessions.read().unwrap().get(id).cloned()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }
}

/// Later rows of a session supersede earlier ones.
fn index_row(versions: &BTreeMap<String, Published>, sessions: &mut HashMap<String, SessionRecord>, row: ResponseSheet) {
    let scores = match versions.get(&row.version_id) {
        Some(p) => match score_response(&p.questionnaire, &row) {
            Ok(s) => Some(s),
            Err(e) => {
                log::warn!("journaled session {} does not score: {e}", row.subject_id);
                None
            }
        },
        None => None,
    };
    let choices = row.choices.iter().map(|c| ((c.trait_, c.round), c.leaf_index)).collect();
    let stamp = row.finished_at.clone().unwrap_or_default();
    let created_at = sessions
        .get(&row.subject_id)
        .map(|s| s.created_at.clone())
        .or_else(|| row.started_at.clone())
        .unwrap_or_else(|| stamp.clone());
    sessions.insert(
        row.subject_id.clone(),
        SessionRecord {
            session_id: row.subject_id,
            version_id: row.version_id,
            choices,
            scores,
            self_rating: row.self_rating,
            created_at,
            updated_at: stamp,
            completed: true,
        },
    );
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/questionnaire", get(get_questionnaire))
        .route("/api/responses", post(post_responses))
        .route("/api/health", get(health))
        .route("/images/{*id}", get(get_image))
        .with_state(state)
}

/// Router plus the optional CORS layer and static file fallback.
pub fn app(cfg: &ServiceConfig, state: Arc<AppState>) -> Result<Router, ServiceError> {
    let mut app = router(state);
    if let Some(dir) = &cfg.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    if let Some(origin) = &cfg.allow_origin {
        let value = HeaderValue::from_str(origin).map_err(|_| ServiceError::BadOrigin(origin.clone()))?;
        app = app.layer(
            CorsLayer::new()
                .allow_origin(value)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    Ok(app)
}

/// Loads state, binds and serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::load(&cfg)?);
    let app = app(&cfg, state)?;
    let addr = SocketAddr::new(cfg.host, cfg.port);
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServiceError::Io {
        path: addr.to_string(),
        source,
    })?;
    log::info!("listening on http://{}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| ServiceError::Io {
            path: addr.to_string(),
            source,
        })
}

struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Deserialize)]
struct VersionQuery {
    version: Option<String>,
}

impl AppState {
    fn published(&self, version: Option<&str>) -> Result<&Published, ApiError> {
        let id = version.unwrap_or(&self.default_version);
        self.versions
            .get(id)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown questionnaire version `{id}`")))
    }
}

async fn get_questionnaire(State(state): State<Arc<AppState>>, Query(q): Query<VersionQuery>) -> Response {
    match state.published(q.version.as_deref()) {
        Ok(p) => ([(header::CONTENT_TYPE, "application/json")], p.body.clone()).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct Submission {
    session_id: Option<String>,
    version_id: Option<String>,
    #[serde(default)]
    choices: Vec<String>,
    self_rating: Option<i64>,
    started_at: Option<String>,
}

#[derive(Debug, Serialize)]
struct Scored<'a> {
    scores: &'a BTreeMap<Trait, f64>,
    session_id: &'a str,
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn decode_choices(p: &Published, tokens: &[String]) -> Result<BTreeMap<(Trait, usize), usize>, ApiError> {
    let mut choices = BTreeMap::new();
    for token in tokens {
        let target = p
            .tokens
            .get(token)
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("unknown option token `{token}`")))?;
        if choices.insert((target.trait_, target.round), target.leaf_index).is_some() {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("two choices for trait {} round {}", target.trait_, target.round),
            ));
        }
    }
    let missing: Vec<(Trait, usize)> = p
        .view
        .questions
        .iter()
        .map(|q| (q.trait_, q.round))
        .filter(|k| !choices.contains_key(k))
        .collect();
    if let Some((t, r)) = missing.first() {
        let list: Vec<_> = missing.iter().map(|(t, r)| json!({ "trait": t, "round": r })).collect();
        return Err(ApiError {
            status: StatusCode::BAD_REQUEST,
            body: json!({
                "error": format!("missing choice for trait {t} round {r}"),
                "missing": list,
            }),
        });
    }
    Ok(choices)
}

fn sheet(id: &str, version: &str, choices: &BTreeMap<(Trait, usize), usize>, rating: Option<u8>) -> ResponseSheet {
    ResponseSheet {
        subject_id: id.to_string(),
        version_id: version.to_string(),
        choices: choices
            .iter()
            .map(|(&(trait_, round), &leaf_index)| Choice {
                trait_,
                round,
                leaf_index,
            })
            .collect(),
        self_rating: rating,
        started_at: None,
        finished_at: None,
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn scored(scores: &BTreeMap<Trait, f64>, id: &str) -> Response {
    Json(Scored { scores, session_id: id }).into_response()
}

async fn post_responses(State(state): State<Arc<AppState>>, body: axum::body::Bytes) -> Response {
    let sub: Submission = match serde_json::from_slice(&body) {
        Ok(s) => s,
        Err(e) => return ApiError::new(StatusCode::BAD_REQUEST, format!("malformed submission: {e}")).into_response(),
    };
    let state2 = state.clone();
    match tokio::task::spawn_blocking(move || submit(&state2, sub)).await {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

fn submit(state: &AppState, sub: Submission) -> Result<Response, ApiError> {
    let rating = match sub.self_rating {
        None => None,
        Some(r @ 1..=7) => Some(r as u8),
        Some(r) => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("self_rating must be between 1 and 7, got {r}"),
            ))
        }
    };
    if let Some(id) = &sub.session_id {
        if !valid_session_id(id) {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "session_id must be 1-128 URL-safe characters"));
        }
    }
    let published = state.published(sub.version_id.as_deref())?;
    let version = &published.questionnaire.version_id;

    // Holding the journal lock serializes check, append and index update.
    let mut journal = state.journal.lock().unwrap();
    let existing = sub.session_id.as_deref().and_then(|id| state.session(id));
    if let Some(rec) = existing {
        let choices = if sub.choices.is_empty() {
            rec.choices.clone()
        } else {
            decode_choices(published, &sub.choices)?
        };
        if rec.version_id != *version || rec.choices != choices {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("session `{}` was already completed with different choices", rec.session_id),
            ));
        }
        let scores = rec
            .scores
            .clone()
            .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "session cannot be scored"))?;
        if rating.is_some() && rating != rec.self_rating {
            let stamp = now();
            let mut row = sheet(&rec.session_id, version, &rec.choices, rating);
            row.started_at = Some(rec.created_at.clone());
            row.finished_at = Some(stamp.clone());
            journal.append(&row).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            let mut sessions = state.sessions.write().unwrap();
            let entry = sessions.get_mut(&rec.session_id).expect("session present");
            entry.self_rating = rating;
            entry.updated_at = stamp;
        }
        return Ok(scored(&scores, &rec.session_id));
    }

    let choices = decode_choices(published, &sub.choices)?;
    let id = sub.session_id.unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
    let mut row = sheet(&id, version, &choices, rating);
    let scores = score_response(&published.questionnaire, &row)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let stamp = now();
    row.started_at = Some(sub.started_at.unwrap_or_else(|| stamp.clone()));
    row.finished_at = Some(stamp.clone());
    journal.append(&row).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    state.sessions.write().unwrap().insert(
        id.clone(),
        SessionRecord {
            session_id: id.clone(),
            version_id: version.clone(),
            choices,
            scores: Some(scores.clone()),
            self_rating: rating,
            created_at: row.started_at.clone().unwrap_or_default(),
            updated_at: stamp,
            completed: true,
        },
    );
    Ok(scored(&scores, &id))
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    Json(json!({
        "status": "ok",
        "questionnaire_version": state.default_version,
        "versions": state.versions.keys().collect::<Vec<_>>(),
        "sessions": state.session_count(),
        "uptime": state.started.elapsed().as_secs_f64(),
    }))
    .into_response()
}

/// Image ids are plain file names: no separators, no leading dot.
fn valid_image_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 255
        && !id.starts_with('.')
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
}

const IMAGE_EXTENSIONS: [&str; 6] = ["jpg", "jpeg", "png", "gif", "webp", "svg"];

fn image_candidates(dir: &Path, id: &str) -> Vec<PathBuf> {
    std::iter::once(dir.join(id))
        .chain(IMAGE_EXTENSIONS.iter().map(|ext| dir.join(format!("{id}.{ext}"))))
        .collect()
}

async fn get_image(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    if !valid_image_id(&id) {
        return ApiError::new(StatusCode::BAD_REQUEST, "malformed image id").into_response();
    }
    for path in image_candidates(&state.images_dir, &id) {
        match tokio::fs::read(&path).await {
            Ok(bytes) => {
                let mime = mime_guess::from_path(&path).first_or_octet_stream();
                return ([(header::CONTENT_TYPE, mime.to_string())], Body::from(bytes)).into_response();
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
            Err(e) if e.kind() == std::io::ErrorKind::IsADirectory => continue,
            Err(e) => {
                log::warn!("{}: {e}", path.display());
                continue;
            }
        }
    }
    ApiError::new(StatusCode::NOT_FOUND, format!("unknown image `{id}`")).into_response()
}
