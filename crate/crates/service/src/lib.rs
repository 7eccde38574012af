//! JSON-over-HTTP front end to a loaded [`Engine`].
//!
//! The engine is immutable after startup and shared by all requests.

pub mod api;
mod error;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use stylesearch_core::engine::{Engine, Method};

use api::{
    Health, ItemPage, ItemView, ItemsQuery, MethodStatus, QueryRequest, QueryResponse,
    ResultView,
};
pub use error::ApiError;

const DEFAULT_PER_PAGE: usize = 24;
const MAX_PER_PAGE: usize = 200;

type Shared = Arc<Engine>;

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/api/query", post(query))
        .route("/api/items", get(list_items))
        .route("/api/items/{id}", get(get_item))
        .route("/api/methods", get(methods))
        .route("/api/health", get(health))
        .with_state(engine)
}

pub async fn serve(engine: Arc<Engine>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(engine)).await
}

/// Runs a request exactly as the HTTP handler does, minus the transport.
pub fn answer(engine: &Engine, req: QueryRequest) -> Result<QueryResponse, ApiError> {
    let started = Instant::now();
    let method = req.method;
    let list = engine.query(&req.into_request()?)?;
    let results = list
        .entries
        .iter()
        .map(|e| {
            let item = engine.catalog().item(&e.id);
            ResultView {
                id: e.id.clone(),
                category: item.map(|i| i.category.clone()).unwrap_or_default(),
                name: item.map(|i| i.name.clone()).unwrap_or_default(),
                description: item.map(|i| i.description.clone()).unwrap_or_default(),
                score: e.score,
                stage: e.stage,
                provenance: (&e.provenance).into(),
            }
        })
        .collect();
    Ok(QueryResponse {
        method,
        results,
        warnings: list.warnings,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

// The body is parsed by hand so that every malformed request maps to 400
// with the error envelope.
async fn query(State(engine): State<Shared>, body: Bytes) -> Result<Json<QueryResponse>, ApiError> {
    let req: QueryRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))?;
    let resp = tokio::task::spawn_blocking(move || answer(&engine, req))
        .await
        .map_err(|e| ApiError::new(axum::http::StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(resp))
}

async fn get_item(
    State(engine): State<Shared>,
    Path(id): Path<String>,
) -> Result<Json<ItemView>, ApiError> {
    engine
        .catalog()
        .item(&id)
        .map(|it| Json(ItemView::from(it)))
        .ok_or_else(|| ApiError::from(stylesearch_core::Error::UnknownItem(id)))
}

async fn list_items(
    State(engine): State<Shared>,
    params: Result<Query<ItemsQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<ItemPage>, ApiError> {
    let Query(q) = params.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let per_page = q.per_page.unwrap_or(DEFAULT_PER_PAGE);
    if !(1..=MAX_PER_PAGE).contains(&per_page) {
        return Err(ApiError::bad_request(format!(
            "per_page must be in 1..={MAX_PER_PAGE}"
        )));
    }
    let matching: Vec<_> = engine
        .catalog()
        .items()
        .filter(|it| q.category.as_ref().is_none_or(|c| it.category == *c))
        .collect();
    let items = matching
        .iter()
        .skip(q.page.saturating_mul(per_page))
        .take(per_page)
        .map(|it| ItemView::from(*it))
        .collect();
    Ok(Json(ItemPage {
        items,
        page: q.page,
        per_page,
        total: matching.len(),
    }))
}

async fn methods(State(engine): State<Shared>) -> Json<Vec<MethodStatus>> {
    Json(
        Method::ALL
            .into_iter()
            .map(|m| MethodStatus {
                name: m,
                ready: engine.is_ready(m),
            })
            .collect(),
    )
}

async fn health(State(engine): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        items: engine.catalog().len(),
        sets: engine.catalog().set_count(),
        models: engine.fingerprints().iter().cloned().collect(),
    })
}
