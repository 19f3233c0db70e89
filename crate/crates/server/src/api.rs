//! HTTP routes. Every JSON response uses the canonical serialization, so
//! identical requests get byte-identical bodies.

use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::header::{HeaderName, CONTENT_TYPE};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use lru::LruCache;
use memscope::masklab::{compare_strategies, HarnessConfig, Strategy, StrategyTable};
use memscope::metrics::derive_all;
use memscope::projection::{tsne, Projection, ProjectionConfig};
use memscope::query::{evaluate, intervals_from_steps, ProjectedSteps, QueryContext, QueryError, QueryExpr};
use memscope::reorder::{reorder, Criterion, ReorderError};
use memscope::trace::{memory_matrix, EpisodeTrace};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::catalog::{CatalogError, DataCatalog};

/// Response header carrying the id of a computed projection.
pub const PROJECTION_ID_HEADER: &str = "x-projection-id";

/// Projection id accepted by lasso queries for the default configuration.
pub const DEFAULT_PROJECTION: &str = "default";

/// Largest mask-lab run accepted in one request.
pub const MAX_MASKLAB_EPISODES: usize = 1000;

const PROJECTION_CACHE_SIZE: usize = 32;
const MASKLAB_WORKERS: usize = 2;

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    BadRequest { message: String, path: Option<String> },
    Internal(String),
}

impl ApiError {
    fn bad(message: impl Into<String>) -> Self {
        ApiError::BadRequest {
            message: message.into(),
            path: None,
        }
    }

    fn bad_at(path: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError::BadRequest {
            message: message.into(),
            path: Some(path.into()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NotFound(message) => (StatusCode::NOT_FOUND, json!({ "error": message })),
            ApiError::BadRequest { message, path } => {
                (StatusCode::BAD_REQUEST, json!({ "error": message, "path": path }))
            }
            ApiError::Internal(message) => {
                log::error!("{message}");
                (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": message }))
            }
        };
        let bytes = memscope::canonical::to_vec(&body).unwrap_or_default();
        (status, [(CONTENT_TYPE, "application/json")], bytes).into_response()
    }
}

impl From<CatalogError> for ApiError {
    fn from(err: CatalogError) -> Self {
        match err {
            CatalogError::UnknownEpisode(_) => ApiError::NotFound(err.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<ReorderError> for ApiError {
    fn from(err: ReorderError) -> Self {
        match err {
            ReorderError::Projection(e) => ApiError::Internal(e.to_string()),
            other => ApiError::bad(other.to_string()),
        }
    }
}

impl From<QueryError> for ApiError {
    fn from(err: QueryError) -> Self {
        match err {
            QueryError::Validation { path, message } => ApiError::bad_at(path, message),
            other => ApiError::bad(other.to_string()),
        }
    }
}

/// Shared state: the catalog, the projection cache and the mask-lab pool.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    catalog: DataCatalog,
    projections: Mutex<LruCache<(String, String), Arc<Projection>>>,
    masklab: Semaphore,
    harness: HarnessConfig,
}

impl AppState {
    pub fn new(catalog: DataCatalog) -> Self {
        AppState {
            inner: Arc::new(Inner {
                catalog,
                projections: Mutex::new(LruCache::new(
                    NonZeroUsize::new(PROJECTION_CACHE_SIZE).expect("non-zero"),
                )),
                masklab: Semaphore::new(MASKLAB_WORKERS),
                harness: HarnessConfig::default(),
            }),
        }
    }

    pub fn catalog(&self) -> &DataCatalog {
        &self.inner.catalog
    }

    fn episode(&self, id: &str) -> Result<Arc<EpisodeTrace>, ApiError> {
        Ok(self.inner.catalog.get(id)?)
    }

    fn cached_projection(&self, episode: &str, config_id: &str) -> Option<Arc<Projection>> {
        self.inner
            .projections
            .lock()
            .expect("projection cache lock")
            .get(&(episode.to_owned(), config_id.to_owned()))
            .cloned()
    }

    /// Projects every hidden state of the episode, reusing a cached result.
    async fn projection(
        &self,
        episode: Arc<EpisodeTrace>,
        config: ProjectionConfig,
    ) -> Result<Arc<Projection>, ApiError> {
        let config_id = config.id();
        if let Some(hit) = self.cached_projection(&episode.id, &config_id) {
            return Ok(hit);
        }
        let id = episode.id.clone();
        let projection = tokio::task::spawn_blocking(move || project_episode(&episode, &config))
            .await
            .map_err(|e| ApiError::Internal(e.to_string()))??;
        let projection = Arc::new(projection);
        self.inner
            .projections
            .lock()
            .expect("projection cache lock")
            .put((id, config_id), projection.clone());
        Ok(projection)
    }
}

/// The projection served for an episode: t-SNE of the raw hidden states, one
/// point per step.
pub fn project_episode(episode: &EpisodeTrace, config: &ProjectionConfig) -> Result<Projection, ApiError> {
    let points: Vec<Vec<f64>> = episode.steps.iter().map(|s| s.hidden.clone()).collect();
    tsne(&points, config).map_err(|e| ApiError::bad(e.to_string()))
}

/// All API routes; with `ui_dir`, other paths serve static files from it.
pub fn build_router(state: AppState, ui_dir: Option<&std::path::Path>) -> Router {
    let cors = CorsLayer::permissive().expose_headers([HeaderName::from_static(PROJECTION_ID_HEADER)]);
    let mut router = Router::new()
        .route("/api/episodes", get(list_episodes))
        .route("/api/episodes/{id}", get(get_episode))
        .route("/api/episodes/{id}/metrics", get(get_metrics))
        .route("/api/episodes/{id}/reorder", post(post_reorder))
        .route("/api/episodes/{id}/projection", post(post_projection))
        .route("/api/episodes/{id}/query", post(post_query))
        .route("/api/masklab/run", post(post_masklab))
        .route("/frames/{id}/{file}", get(get_frame));
    if let Some(dir) = ui_dir {
        router = router.fallback_service(ServeDir::new(dir));
    }
    router.layer(cors).with_state(state)
}

fn json_response<T: Serialize>(value: &T) -> Result<Response, ApiError> {
    let bytes = memscope::canonical::to_vec(value).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(([(CONTENT_TYPE, "application/json")], bytes).into_response())
}

/// Parses a JSON body; an empty body reads as `{}`.
fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let body = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}".as_slice()
    } else {
        body
    };
    let mut de = serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let path = err.path().to_string();
        ApiError::bad_at(path, err.into_inner().to_string())
    })
}

async fn list_episodes(State(state): State<AppState>) -> Result<Response, ApiError> {
    json_response(&state.catalog().summaries())
}

async fn get_episode(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    json_response(&*state.episode(&id)?)
}

async fn get_metrics(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    json_response(&derive_all(&*state.episode(&id)?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReorderRequest {
    pub criterion: Criterion,
    #[serde(default)]
    pub interval: Option<[usize; 2]>,
}

async fn post_reorder(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let episode = state.episode(&id)?;
    let request: ReorderRequest = parse_body(&body)?;
    let matrix = memory_matrix(&episode);
    let result = if request.criterion == Criterion::Tsne1d {
        tokio::task::spawn_blocking(move || reorder(&matrix, request.criterion, request.interval))
            .await
            .map_err(|e| ApiError::Internal(e.to_string()))??
    } else {
        reorder(&matrix, request.criterion, request.interval)?
    };
    json_response(&result)
}

async fn post_projection(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let episode = state.episode(&id)?;
    let config: ProjectionConfig = parse_body(&body)?;
    config.validate().map_err(|e| ApiError::bad(e.to_string()))?;
    let config_id = config.id();
    let projection = state.projection(episode, config).await?;
    let mut response = json_response(&*projection)?;
    response.headers_mut().insert(
        HeaderName::from_static(PROJECTION_ID_HEADER),
        HeaderValue::from_str(&config_id).expect("hex id"),
    );
    Ok(response)
}

/// Projection ids referenced by lasso predicates.
fn lasso_projections(expr: &QueryExpr, out: &mut Vec<String>) {
    match expr {
        QueryExpr::And(c) | QueryExpr::Or(c) => c.iter().for_each(|e| lasso_projections(e, out)),
        QueryExpr::Not(c) => lasso_projections(c, out),
        QueryExpr::Pred(memscope::query::Predicate::Lasso { projection, .. }) => {
            if !out.contains(projection) {
                out.push(projection.clone());
            }
        }
        QueryExpr::Pred(_) => {}
    }
}

#[derive(Debug, Serialize)]
pub struct QueryResponse {
    pub episode_id: String,
    pub steps: Vec<usize>,
    pub intervals: Vec<[usize; 2]>,
}

async fn post_query(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let episode = state.episode(&id)?;
    let value: Value = parse_body(&body)?;
    let expr = QueryExpr::from_json(&value)?;

    let mut ids = Vec::new();
    lasso_projections(&expr, &mut ids);
    let mut ctx = QueryContext::for_episode(&episode);
    for projection_id in ids {
        let projection = if projection_id == DEFAULT_PROJECTION {
            state.projection(episode.clone(), ProjectionConfig::default()).await?
        } else {
            state
                .cached_projection(&episode.id, &projection_id)
                .ok_or_else(|| ApiError::bad(format!("unknown projection `{projection_id}`; request it first")))?
        };
        let steps = (0..episode.len()).collect();
        ctx.projections
            .insert(projection_id, ProjectedSteps::new(steps, &projection));
    }
    let set = evaluate(&expr, &ctx)?;
    let intervals = intervals_from_steps(&set);
    json_response(&QueryResponse {
        episode_id: set.episode_id,
        steps: set.steps,
        intervals,
    })
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskLabRequest {
    pub strategy: OneOrMany,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_episodes() -> usize {
    100
}

/// Parses strategy names and puts the full-memory baseline first.
pub fn strategies_with_baseline(names: &[String]) -> Result<Vec<Strategy>, (usize, String)> {
    let mut parsed = names
        .iter()
        .enumerate()
        .map(|(i, n)| n.parse::<Strategy>().map_err(|e| (i, e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if !parsed.contains(&Strategy::Full) {
        parsed.insert(0, Strategy::Full);
    }
    Ok(parsed)
}

/// Runs a mask-lab comparison with the server's harness configuration.
pub fn run_masklab(request: &MaskLabRequest, harness: &HarnessConfig) -> Result<StrategyTable, ApiError> {
    if !(1..=MAX_MASKLAB_EPISODES).contains(&request.episodes) {
        return Err(ApiError::bad_at(
            "episodes",
            format!("must be between 1 and {MAX_MASKLAB_EPISODES}"),
        ));
    }
    let names = match &request.strategy {
        OneOrMany::One(name) => vec![name.clone()],
        OneOrMany::Many(names) => names.clone(),
    };
    let strategies = strategies_with_baseline(&names).map_err(|(i, message)| {
        let path = match request.strategy {
            OneOrMany::One(_) => "strategy".to_string(),
            OneOrMany::Many(_) => format!("strategy[{i}]"),
        };
        ApiError::bad_at(path, message)
    })?;
    compare_strategies(&strategies, request.episodes, request.seed, harness)
        .map_err(|e| ApiError::Internal(e.to_string()))
}

async fn post_masklab(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let request: MaskLabRequest = parse_body(&body)?;
    let _permit = state
        .inner
        .masklab
        .acquire()
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let harness = state.inner.harness.clone();
    let table = tokio::task::spawn_blocking(move || run_masklab(&request, &harness))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    json_response(&table)
}

fn safe_component(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

async fn get_frame(
    State(state): State<AppState>,
    Path((id, file)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    if !safe_component(&id) || !safe_component(&file) {
        return Err(ApiError::bad("invalid frame path"));
    }
    if !state.catalog().contains(&id) {
        return Err(ApiError::NotFound(format!("unknown episode `{id}`")));
    }
    let path = state.catalog().root().join("frames").join(&id).join(&file);
    match tokio::fs::read(&path).await {
        Ok(bytes) => {
            let mime = if file.ends_with(".png") {
                "image/png"
            } else {
                "application/octet-stream"
            };
            Ok(([(CONTENT_TYPE, mime)], bytes).into_response())
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(ApiError::NotFound(format!("no frame `{file}` for episode `{id}`")))
        }
        Err(e) => Err(ApiError::Internal(e.to_string())),
    }
}
