//! HTTP API of the monitoring and healing backend.
//!
//! | Method | Path             | Body / query                         | Reply                 |
//! |--------|------------------|--------------------------------------|-----------------------|
//! | POST   | `/errors`        | `{error, page_uuid?}` or a beacon    | stored `ErrorRecord`  |
//! | GET    | `/errors`        | `?url=`                              | `[JsError]`           |
//! | GET    | `/records`       |                                      | `[ErrorRecord]`       |
//! | POST   | `/activations`   | activation, `occurred_at` optional   | `{stored, orphan}`    |
//! | POST   | `/expectations`  | `PageLoad`                           | 204                   |
//! | GET    | `/stats`         |                                      | `[EffectivenessStat]` |
//! | GET    | `/stats/summary` |                                      | text, one per line    |
//!
//! Bodies are JSON regardless of the declared content type, since browser
//! beacons arrive as `text/plain`.

use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bytes::Bytes;
use chrono::{DateTime, Utc};
use serde::Deserialize;

use selfheal_core::intel::{ErrorBeacon, LibraryRule};
use selfheal_core::model::{JsError, StrategyActivation, StrategyKind};
use selfheal_core::store::{PageLoad, Store, StoreError};

#[derive(Clone)]
pub struct BackendState {
    pub store: Arc<Store>,
    pub rules: Arc<Vec<LibraryRule>>,
}

impl BackendState {
    pub fn new(store: Arc<Store>, rules: Vec<LibraryRule>) -> Self {
        BackendState { store, rules: Arc::new(rules) }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ErrorReport {
    Structured {
        error: JsError,
        #[serde(default)]
        page_uuid: Option<String>,
    },
    Beacon(ErrorBeacon),
}

impl ErrorReport {
    pub fn into_parts(self, now: DateTime<Utc>) -> Result<(JsError, Option<String>), String> {
        match self {
            ErrorReport::Structured { error, page_uuid } => Ok((error, page_uuid)),
            ErrorReport::Beacon(b) => {
                let error = b.to_error(now).map_err(|e| e.to_string())?;
                Ok((error, Some(b.page_uuid)))
            }
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct ActivationReport {
    pub page_uuid: String,
    pub strategy: StrategyKind,
    pub target_error: String,
    pub resource_url: String,
    #[serde(default)]
    pub occurred_at: Option<DateTime<Utc>>,
}

impl ActivationReport {
    pub fn into_activation(self, now: DateTime<Utc>) -> StrategyActivation {
        StrategyActivation {
            page_uuid: self.page_uuid,
            strategy: self.strategy,
            target_error: self.target_error,
            resource_url: self.resource_url,
            occurred_at: self.occurred_at.unwrap_or(now),
        }
    }
}

fn reject(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

fn store_failure(e: StoreError) -> Response {
    match e {
        StoreError::Invalid(e) => reject(StatusCode::BAD_REQUEST, e.to_string()),
        other => {
            tracing::error!(error = %other, "store write failed");
            reject(StatusCode::INTERNAL_SERVER_ERROR, other.to_string())
        }
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| reject(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

/// Records a report in `store`. Shared with the proxy's local-store mode.
pub fn record_error_report(store: &Store, body: &[u8]) -> Result<selfheal_core::store::ErrorRecord, Response> {
    let report: ErrorReport = parse(body)?;
    let (error, uuid) = report.into_parts(Utc::now()).map_err(|e| reject(StatusCode::BAD_REQUEST, e))?;
    store.record_error(error, uuid).map_err(store_failure)
}

pub fn record_activation_report(store: &Store, body: &[u8]) -> Result<selfheal_core::store::ActivationAck, Response> {
    let report: ActivationReport = parse(body)?;
    store.record_activation(report.into_activation(Utc::now())).map_err(store_failure)
}

async fn post_error(State(s): State<BackendState>, body: Bytes) -> Response {
    let store = s.store.clone();
    match tokio::task::spawn_blocking(move || record_error_report(&store, &body)).await {
        Ok(Ok(record)) => (StatusCode::CREATED, Json(record)).into_response(),
        Ok(Err(resp)) => resp,
        Err(e) => reject(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

#[derive(Deserialize)]
struct UrlQuery {
    url: Option<String>,
}

async fn get_errors(State(s): State<BackendState>, Query(q): Query<UrlQuery>) -> Response {
    match q.url {
        Some(url) => Json(s.store.query_errors(&url)).into_response(),
        None => reject(StatusCode::BAD_REQUEST, "missing url parameter"),
    }
}

async fn get_records(State(s): State<BackendState>) -> Response {
    Json(s.store.error_records()).into_response()
}

async fn post_activation(State(s): State<BackendState>, body: Bytes) -> Response {
    let store = s.store.clone();
    match tokio::task::spawn_blocking(move || record_activation_report(&store, &body)).await {
        Ok(Ok(ack)) => Json(ack).into_response(),
        Ok(Err(resp)) => resp,
        Err(e) => reject(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn post_expectations(State(s): State<BackendState>, body: Bytes) -> Response {
    let load: PageLoad = match parse(&body) {
        Ok(l) => l,
        Err(r) => return r,
    };
    let store = s.store.clone();
    match tokio::task::spawn_blocking(move || store.record_load(load)).await {
        Ok(Ok(())) => StatusCode::NO_CONTENT.into_response(),
        Ok(Err(e)) => store_failure(e),
        Err(e) => reject(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn get_stats(State(s): State<BackendState>) -> Response {
    Json(s.store.compute_stats()).into_response()
}

async fn get_summary(State(s): State<BackendState>) -> Response {
    let mut text = s.store.summaries(&s.rules).join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    ([(axum::http::header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response()
}

pub fn router(state: BackendState) -> Router {
    Router::new()
        .route("/errors", post(post_error).get(get_errors))
        .route("/records", get(get_records))
        .route("/activations", post(post_activation))
        .route("/expectations", post(post_expectations))
        .route("/stats", get(get_stats))
        .route("/stats/summary", get(get_summary))
        .with_state(state)
}

/// Serves the backend on `listener` until the future is dropped.
pub async fn serve(listener: tokio::net::TcpListener, state: BackendState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
