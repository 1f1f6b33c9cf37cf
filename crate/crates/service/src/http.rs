//! JSON/PNG HTTP API over a [`Workspace`].

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderValue};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use gpm_core::tensor_store::LayerRecord;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use crate::error::ServiceError;
use crate::workspace::{check_relative, StrokeUpdate, Workspace};

type Shared = Arc<Workspace>;

pub fn router(ws: Shared) -> Router {
    Router::new()
        .route("/v1/stacks", post(create_stack))
        .route("/v1/stacks/{id}", get(stack_summary))
        .route("/v1/stacks/{id}/strokes", put(put_strokes))
        .route("/v1/stacks/{id}/segmentation", get(segmentation))
        .route("/v1/stacks/{id}/preview", get(preview))
        .route("/v1/stacks/{id}/export", post(export))
        .route("/v1/stacks/{id}/metrics", get(metrics))
        .layer(DefaultBodyLimit::disable())
        .with_state(ws)
}

/// Serves until the listener fails or the task is dropped.
pub async fn serve_listener(listener: TcpListener, ws: Shared) -> std::io::Result<()> {
    axum::serve(listener, router(ws)).await
}

async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn create_stack(
    State(ws): State<Shared>,
    mut multipart: Multipart,
) -> Result<Json<serde_json::Value>, ServiceError> {
    let bad = |e: axum::extract::multipart::MultipartError| ServiceError::BadRequest(e.body_text());
    let mut manifest: Option<Bytes> = None;
    let mut files = Vec::new();
    while let Some(field) = multipart.next_field().await.map_err(bad)? {
        // Parts are named by their manifest-relative path; the file name is
        // accepted when a client encodes the part name in a form multer skips.
        let name = field
            .name()
            .or(field.file_name())
            .map(str::to_string)
            .ok_or_else(|| ServiceError::BadRequest("multipart part without a name".into()))?;
        let data = field.bytes().await.map_err(bad)?;
        if name == "manifest" {
            manifest = Some(data);
        } else {
            files.push((name, data.to_vec()));
        }
    }
    let manifest =
        manifest.ok_or_else(|| ServiceError::BadRequest("missing \"manifest\" part".into()))?;
    let id = blocking(move || ws.ingest_upload(&manifest, files)).await?;
    Ok(Json(json!({ "stack_id": id })))
}

#[derive(Serialize)]
struct StackSummary<'a> {
    stack_id: &'a str,
    n_images: usize,
    width: usize,
    height: usize,
    layers: &'a [LayerRecord],
    timesteps: &'a [u32],
    version: u64,
    base_index: usize,
    stroke_count: usize,
}

async fn stack_summary(
    State(ws): State<Shared>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ServiceError> {
    blocking(move || {
        let h = ws.stack(&id)?;
        let session = h.session();
        let m = h.stack().manifest();
        let (width, height) = h.stack().size();
        let summary = StackSummary {
            stack_id: h.id(),
            n_images: h.stack().n_images(),
            width,
            height,
            layers: &m.layers,
            timesteps: &m.timesteps,
            version: session.version,
            base_index: session.strokes.base_index,
            stroke_count: session.strokes.strokes.len(),
        };
        Ok(Json(serde_json::to_value(summary).expect("summary serializes")))
    })
    .await
}

async fn put_strokes(
    State(ws): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<StrokeUpdate>, JsonRejection>,
) -> Result<Json<serde_json::Value>, ServiceError> {
    let h = blocking({
        let ws = ws.clone();
        move || ws.stack(&id)
    })
    .await?;
    let Json(update) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let version = blocking(move || h.update_strokes(update)).await?;
    Ok(Json(json!({ "version": version })))
}

#[derive(Deserialize)]
struct VersionQuery {
    version: Option<u64>,
}

async fn segmentation(
    State(ws): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<VersionQuery>,
) -> Result<Response, ServiceError> {
    let seg = blocking(move || ws.stack(&id)?.segmentation(q.version)).await?;
    let mut resp = png(seg.png.clone());
    let headers = resp.headers_mut();
    let energy = format!("{}", seg.output.labels.energy);
    headers.insert("x-gpm-energy", HeaderValue::from_str(&energy).expect("ascii"));
    headers.insert("x-gpm-version", HeaderValue::from(seg.version));
    Ok(resp)
}

async fn preview(
    State(ws): State<Shared>,
    Path(id): Path<String>,
) -> Result<Response, ServiceError> {
    let bytes = blocking(move || {
        let h = ws.stack(&id)?;
        let seg = h.segmentation(None)?;
        h.preview_png(&seg.output.labels)
    })
    .await?;
    Ok(png(bytes))
}

async fn export(
    State(ws): State<Shared>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ServiceError> {
    blocking(move || {
        let h = ws.stack(&id)?;
        let seg = h.segmentation(None)?;
        let base = h.session().strokes.base_index;
        let out = h.dir().join("exports").join(format!("v{}", seg.version));
        let bundle = h.export(&seg.output.labels, base, &out)?;
        Ok(Json(json!({
            "path": out,
            "version": seg.version,
            "label_map_hash": bundle.label_map_hash,
        })))
    })
    .await
}

#[derive(Deserialize)]
struct MetricsQuery {
    blended: Option<String>,
}

async fn metrics(
    State(ws): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<MetricsQuery>,
) -> Result<Json<serde_json::Value>, ServiceError> {
    blocking(move || {
        let h = ws.stack(&id)?;
        let seg = h.segmentation(None)?;
        let labels = &seg.output.labels;
        let base = h.session().strokes.base_index;
        let report = match q.blended.as_deref().unwrap_or("poisson") {
            "poisson" => h.metrics_for(labels, &h.poisson(labels, base)?.image)?,
            "preview" => {
                let comp = gpm_core::compositor::pixel_composite(h.stack().images(), labels)
                    .map_err(|e| ServiceError::Internal(e.to_string()))?;
                h.metrics_for(labels, &comp.image)?
            }
            rel => {
                check_relative(rel)?;
                h.metrics(labels, &h.dir().join(rel))?
            }
        };
        let mut body = serde_json::to_value(report).expect("report serializes");
        body["version"] = json!(seg.version);
        Ok(Json(body))
    })
    .await
}
