//! HTTP serving over a trained checkpoint with in-memory dialogue sessions.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use crs_core::corpus::{serialize_utterances, Speaker, Utterance};
use crs_core::kg::EntityLinker;
use crs_core::model::{DialogueEncoder, ModelParams};
use crs_core::{EntityId, Error, Kg, Model};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Mutex;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub const ENV_BIND: &str = "CRS_BIND";
pub const ENV_CORS_ORIGIN: &str = "CRS_CORS_ORIGIN";
pub const ENV_SESSION_IDLE_SECS: &str = "CRS_SESSION_IDLE_SECS";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_IDLE: Duration = Duration::from_secs(30 * 60);
const MAX_ENTITY_MATCHES: usize = 100;

#[derive(Debug, Clone)]
pub struct Session {
    pub utterances: Vec<Utterance>,
    /// Distinct mentioned entities in first-mention order.
    pub entities: Vec<EntityId>,
    pub created: Instant,
    pub last_active: Instant,
}

impl Session {
    fn new() -> Self {
        let now = Instant::now();
        Self { utterances: Vec::new(), entities: Vec::new(), created: now, last_active: now }
    }

    fn mention(&mut self, ids: &[EntityId]) {
        for &e in ids {
            if !self.entities.contains(&e) {
                self.entities.push(e);
            }
        }
    }
}

type SessionMap = HashMap<String, Arc<Mutex<Session>>>;

pub struct AppState {
    pub model: Model,
    pub kg: Kg,
    linker: EntityLinker,
    encoder: Arc<dyn DialogueEncoder>,
    pub checkpoint_hash: String,
    sessions: Mutex<SessionMap>,
    idle: Duration,
}

impl AppState {
    pub fn new(model: Model, kg: Kg, encoder: Arc<dyn DialogueEncoder>, checkpoint_hash: String, idle: Duration) -> Self {
        let linker = kg.linker();
        Self { model, kg, linker, encoder, checkpoint_hash, sessions: Mutex::new(HashMap::new()), idle }
    }

    /// Removes sessions idle for longer than the configured timeout.
    pub async fn evict_idle(&self) -> usize {
        let mut sessions = self.sessions.lock().await;
        let before = sessions.len();
        let mut keep = HashMap::with_capacity(before);
        for (id, s) in sessions.drain() {
            let idle = s.lock().await.last_active.elapsed();
            if idle <= self.idle {
                keep.insert(id, s);
            }
        }
        *sessions = keep;
        before - sessions.len()
    }

    pub async fn session(&self, id: &str) -> Option<Session> {
        let handle = self.sessions.lock().await.get(id).cloned()?;
        let snapshot = handle.lock().await.clone();
        Some(snapshot)
    }

    pub async fn session_count(&self) -> usize {
        self.sessions.lock().await.len()
    }
}

/// SHA-256 over every parameter value, for checking that serving leaves the
/// model untouched.
pub fn params_digest(params: &ModelParams<f64>) -> String {
    let mut h = Sha256::new();
    for (name, _, xs) in params.tensors() {
        h.update(name.as_bytes());
        for x in xs {
            h.update(x.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    retriable: bool,
}

struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let retriable = matches!(self.status, StatusCode::BAD_GATEWAY | StatusCode::SERVICE_UNAVAILABLE);
        (self.status, Json(ErrorBody { error: self.message, retriable })).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Deserialize)]
pub struct RecommendRequest {
    pub session_id: String,
    pub utterance: String,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendedItem {
    pub item_id: EntityId,
    pub name: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub entity_id: EntityId,
    pub name: String,
    pub is_item: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub recommendations: Vec<RecommendedItem>,
    pub linked_entities: Vec<EntityRef>,
}

#[derive(Debug, Deserialize)]
pub struct EntityQuery {
    #[serde(default)]
    pub q: String,
    pub limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EntityMatches {
    pub matches: Vec<EntityRef>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub checkpoint_hash: String,
    pub num_entities: usize,
}

fn entity_ref(kg: &Kg, id: EntityId) -> EntityRef {
    let e = kg.entity(id).expect("linked ids come from the graph");
    EntityRef { entity_id: id, name: e.name.clone(), is_item: e.is_item }
}

async fn create_session(State(state): State<Arc<AppState>>) -> (StatusCode, Json<SessionCreated>) {
    let id = uuid::Uuid::new_v4().simple().to_string();
    state.sessions.lock().await.insert(id.clone(), Arc::new(Mutex::new(Session::new())));
    (StatusCode::CREATED, Json(SessionCreated { session_id: id }))
}

async fn recommend(
    State(state): State<Arc<AppState>>,
    body: Result<Json<RecommendRequest>, JsonRejection>,
) -> Result<Json<RecommendResponse>, ApiError> {
    let Json(req) = body?;
    if req.utterance.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "utterance is empty"));
    }
    if req.k == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "k must be at least 1"));
    }
    let session = state.sessions.lock().await.get(&req.session_id).cloned();
    let unknown = || ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {}", req.session_id));
    let session = session.ok_or_else(unknown)?;
    // held across the whole request so one session's turns apply in order
    let mut guard = session.lock().await;
    if guard.last_active.elapsed() > state.idle {
        state.sessions.lock().await.remove(&req.session_id);
        return Err(unknown());
    }

    let mentions = state.linker.link_utterance(&req.utterance, guard.utterances.len());
    let mut linked: Vec<EntityId> = Vec::new();
    for m in &mentions {
        if !linked.contains(&m.entity_id) {
            linked.push(m.entity_id);
        }
    }
    // work on a copy so a failed request leaves the session as it was
    let mut next = guard.clone();
    next.utterances.push(Utterance { speaker: Speaker::User, text: req.utterance.clone(), entities: linked.clone() });
    next.mention(&linked);

    let text = serialize_utterances(&next.utterances);
    let encoder = Arc::clone(&state.encoder);
    let embedding = tokio::task::spawn_blocking(move || encoder.encode(&text))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, e.to_string()))?;
    let dialogue = embedding.to_array::<f64>();
    let exclusions: HashSet<EntityId> = next.entities.iter().copied().filter(|&e| state.kg.is_item(e)).collect();
    let k = req.k.min(state.kg.num_items());
    let list = state
        .model
        .recommend(&state.kg, dialogue.view(), &next.entities, k, &exclusions)
        .map_err(|e: Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("model failure: {e}")))?;
    if list.items.iter().any(|r| !r.score.is_finite()) {
        return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "model produced non-finite scores"));
    }

    let recommendations: Vec<RecommendedItem> = list
        .items
        .iter()
        .enumerate()
        .map(|(i, r)| RecommendedItem {
            item_id: r.item_id,
            name: state.kg.entity(r.item_id).map(|e| e.name.clone()).unwrap_or_default(),
            score: r.score,
            rank: i + 1,
        })
        .collect();
    let names: Vec<&str> = recommendations.iter().map(|r| r.name.as_str()).collect();
    let returned: Vec<EntityId> = recommendations.iter().map(|r| r.item_id).collect();
    next.utterances.push(Utterance {
        speaker: Speaker::Recommender,
        text: format!("How about {}?", names.join(", ")),
        entities: returned.clone(),
    });
    next.mention(&returned);
    next.last_active = Instant::now();
    *guard = next;

    Ok(Json(RecommendResponse {
        recommendations,
        linked_entities: linked.iter().map(|&id| entity_ref(&state.kg, id)).collect(),
    }))
}

async fn entities(
    State(state): State<Arc<AppState>>,
    query: Result<Query<EntityQuery>, QueryRejection>,
) -> Result<Json<EntityMatches>, ApiError> {
    let Query(q) = query?;
    let limit = q.limit.unwrap_or(10).min(MAX_ENTITY_MATCHES);
    let matches = state
        .kg
        .search_prefix(q.q.trim(), limit)
        .into_iter()
        .map(|e| EntityRef { entity_id: e.id, name: e.name.clone(), is_item: e.is_item })
        .collect();
    Ok(Json(EntityMatches { matches }))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        checkpoint_hash: state.checkpoint_hash.clone(),
        num_entities: state.kg.num_entities(),
    })
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such endpoint")
}

/// `origin` of `None` disables CORS headers; `"*"` allows any origin.
pub fn router(state: Arc<AppState>, cors_origin: Option<&str>) -> anyhow::Result<Router> {
    let mut app = Router::new()
        .route("/api/session", post(create_session))
        .route("/api/recommend", post(recommend))
        .route("/api/entities", get(entities))
        .route("/api/health", get(health))
        .fallback(not_found)
        .with_state(state);
    if let Some(origin) = cors_origin {
        let allow = if origin == "*" {
            AllowOrigin::from(Any)
        } else {
            AllowOrigin::exact(HeaderValue::from_str(origin)?)
        };
        app = app.layer(CorsLayer::new().allow_origin(allow).allow_methods(Any).allow_headers(Any));
    }
    Ok(app)
}

/// Binds, spawns the eviction sweep and serves until the process ends.
pub async fn serve(state: Arc<AppState>, bind: &str, cors_origin: Option<&str>) -> anyhow::Result<()> {
    let app = router(Arc::clone(&state), cors_origin)?;
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let sweeper = Arc::clone(&state);
    let period = state.idle.min(Duration::from_secs(60)).max(Duration::from_secs(1));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let evicted = sweeper.evict_idle().await;
            if evicted > 0 {
                log::debug!("evicted {evicted} idle sessions");
            }
        }
    });
    axum::serve(listener, app).await?;
    Ok(())
}
