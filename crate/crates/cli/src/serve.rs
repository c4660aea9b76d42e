//! Local read-only prediction service.
//!
//! `POST /predict` takes `{"title", "description", "top_k"?}` and answers
//! `{"ranking": [{"label", "score"}, ...]}`; `GET /health` answers
//! `{"status": "ok", "model_version"}`. The service only accepts connections;
//! it never opens one.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};
use crate::predict::{Predictor, DEFAULT_TOP_K};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const MAX_BODY_BYTES: usize = 1024 * 1024;

fn error_response(status: StatusCode, err: &CliError) -> Response {
    (status, Json(err.to_json())).into_response()
}

fn bad_request(message: impl Into<String>) -> Response {
    error_response(StatusCode::BAD_REQUEST, &CliError::new("bad_request", message))
}

/// Parses the request body by hand so every rejection names what was wrong.
fn parse_request(body: &[u8]) -> Result<(String, String, usize), Response> {
    let value: Value = serde_json::from_slice(body).map_err(|e| bad_request(format!("malformed JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| bad_request("request body must be a JSON object"))?;
    let text_field = |name: &str| -> Result<String, Response> {
        match obj.get(name) {
            None | Some(Value::Null) => Err(bad_request(format!("missing field `{name}`"))),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(bad_request(format!("field `{name}` must be a string"))),
        }
    };
    let title = text_field("title")?;
    let description = text_field("description")?;
    let top_k = match obj.get("top_k") {
        None | Some(Value::Null) => DEFAULT_TOP_K,
        Some(v) => match v.as_u64() {
            Some(k) if k >= 1 => k as usize,
            _ => return Err(bad_request("field `top_k` must be a positive integer")),
        },
    };
    Ok((title, description, top_k))
}

async fn predict(State(p): State<Arc<Predictor>>, body: Result<Bytes, BytesRejection>) -> Response {
    let body = match body {
        Ok(b) => b,
        Err(r) => {
            let kind = if r.status() == StatusCode::PAYLOAD_TOO_LARGE { "payload_too_large" } else { "bad_request" };
            return error_response(r.status(), &CliError::new(kind, r.body_text()));
        }
    };
    let (title, description, top_k) = match parse_request(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    match p.predict(&title, &description, top_k) {
        Ok(out) => Json(out).into_response(),
        Err(e) if e.kind == "empty_text" => error_response(StatusCode::UNPROCESSABLE_ENTITY, &e),
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, &e),
    }
}

async fn health(State(p): State<Arc<Predictor>>) -> Json<Value> {
    Json(json!({ "status": "ok", "model_version": p.version() }))
}

async fn not_found() -> Response {
    error_response(StatusCode::NOT_FOUND, &CliError::new("not_found", "no such route"))
}

pub fn router(predictor: Arc<Predictor>) -> Router {
    Router::new()
        .route("/predict", post(predict))
        .route("/health", get(health))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(predictor)
}

/// Binds `addr` and serves until ctrl-c.
pub fn serve(predictor: Predictor, addr: SocketAddr) -> CliResult<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_io()
        .build()
        .map_err(|e| CliError::new("io", e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::new("bind", format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| CliError::new("io", e.to_string()))?;
        eprintln!(
            "{}",
            json!({ "listening": local.to_string(), "model_version": predictor.version() })
        );
        axum::serve(listener, router(Arc::new(predictor)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::new("io", e.to_string()))
    })
}
