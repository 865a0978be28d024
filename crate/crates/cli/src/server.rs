use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query as Params, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use urbanet::service::{ApiError, ArtifactStore, Envelope, Query, RecommendRequest};

type Shared = Arc<ArtifactStore>;
type QueryParams = Params<BTreeMap<String, String>>;

struct Failure(ApiError);

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0)).into_response()
    }
}

type Reply<T> = Result<Json<Envelope<T>>, Failure>;

fn reply<T: Serialize>(r: Result<Envelope<T>, ApiError>) -> Reply<T> {
    r.map(Json).map_err(Failure)
}

async fn health(State(store): State<Shared>) -> Json<Envelope<serde_json::Value>> {
    Json(Query::new(&store).health())
}

async fn levels(State(store): State<Shared>) -> Json<Envelope<serde_json::Value>> {
    Json(Query::new(&store).levels())
}

async fn regions(State(store): State<Shared>, Params(p): QueryParams) -> Reply<serde_json::Value> {
    reply(Query::new(&store).regions(&p))
}

async fn inet(State(store): State<Shared>, Params(p): QueryParams) -> Reply<serde_json::Value> {
    reply(Query::new(&store).inet(&p))
}

async fn upzones(State(store): State<Shared>, Params(p): QueryParams) -> Reply<serde_json::Value> {
    reply(Query::new(&store).upzones(&p))
}

async fn compare(State(store): State<Shared>, Params(p): QueryParams) -> Reply<serde_json::Value> {
    reply(Query::new(&store).compare(&p))
}

async fn correlations(State(store): State<Shared>, Params(p): QueryParams) -> Reply<serde_json::Value> {
    reply(Query::new(&store).correlations(&p))
}

async fn recommend(State(store): State<Shared>, body: Bytes) -> Response {
    let result = tokio::task::spawn_blocking(move || {
        let req = RecommendRequest::from_json(&body)?;
        Query::new(&store).recommend(&req)
    })
    .await
    .unwrap_or_else(|e| Err(ApiError::internal(e.to_string())));
    match result {
        Ok(env) => Json(env).into_response(),
        Err(e) => Failure(e).into_response(),
    }
}

async fn fallback() -> Failure {
    Failure(ApiError {
        status: 404,
        error: "not_found".into(),
        message: "no such endpoint".into(),
        fields: Vec::new(),
        artifact: None,
    })
}

/// Read-only `/api/v1` routes over `store`.
pub fn router(store: ArtifactStore) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/levels", get(levels))
        .route("/api/v1/regions", get(regions))
        .route("/api/v1/inet", get(inet))
        .route("/api/v1/upzones", get(upzones))
        .route("/api/v1/compare", get(compare))
        .route("/api/v1/correlations", get(correlations))
        .route("/api/v1/recommend", post(recommend))
        .fallback(fallback)
        .with_state(Arc::new(store))
}

pub async fn serve(store: ArtifactStore, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}
