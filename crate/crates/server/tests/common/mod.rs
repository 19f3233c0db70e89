#![allow(dead_code)]

use std::path::Path;

use axum::body::Body;
use axum::http::{HeaderMap, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use memscope::masklab::HarnessConfig;
use memscope_server::commands::generate;
use memscope_server::{build_router, AppState, DataCatalog};
use tower::ServiceExt;

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> Reply {
    let mut request = Request::builder().method(method).uri(uri);
    if body.is_some() {
        request = request.header("content-type", "application/json");
    }
    let request = request
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_owned())))
        .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let body = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    call(app, "GET", uri, None).await
}

pub async fn post(app: &Router, uri: &str, body: &str) -> Reply {
    call(app, "POST", uri, Some(body)).await
}

/// Writes `n` generated episodes (seeds `seed..seed + n`) into `dir`.
pub fn populate(dir: &Path, n: usize, seed: u64, frames: bool) {
    generate(dir, n, seed, frames, &HarnessConfig::default()).unwrap();
}

pub fn router_for(dir: &Path) -> Router {
    build_router(AppState::new(DataCatalog::open(dir).unwrap()), None)
}
