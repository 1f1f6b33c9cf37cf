#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use gpm_core::config::EngineConfig;
use gpm_core::synthetic::{write_synthetic_stack, SyntheticConfig};
use gpm_core::StackManifest;
use gpm_service::Workspace;
use serde_json::{json, Value};

pub fn synthetic_stack(dir: &Path) -> PathBuf {
    write_synthetic_stack(dir, &SyntheticConfig::default()).unwrap()
}

/// Vertical strokes on image 0 at x=10 and image 1 at x=54 of a 64×64 stack.
pub fn split_strokes() -> Value {
    json!({
        "base_index": 0,
        "strokes": [
            { "image_index": 0, "points": [[10.0, 6.0], [10.0, 58.0]], "radius": 3.0 },
            { "image_index": 1, "points": [[54.0, 6.0], [54.0, 58.0]], "radius": 3.0 }
        ]
    })
}

/// Multipart body: the manifest plus one part per referenced file.
pub fn upload_form(manifest_path: &Path) -> reqwest::multipart::Form {
    let root = manifest_path.parent().unwrap();
    let text = fs::read(manifest_path).unwrap();
    let manifest: StackManifest = serde_json::from_slice(&text).unwrap();
    let mut form = reqwest::multipart::Form::new().percent_encode_noop().part(
        "manifest",
        reqwest::multipart::Part::bytes(text).file_name("manifest.json"),
    );
    let mut files: Vec<&String> = manifest.images.iter().chain(manifest.tensors.values()).collect();
    files.sort();
    files.dedup();
    for rel in files {
        let bytes = fs::read(root.join(rel)).unwrap();
        form = form.part(rel.clone(), reqwest::multipart::Part::bytes(bytes).file_name(rel.clone()));
    }
    form
}

/// Starts the API on an ephemeral port; returns its base URL.
pub async fn spawn_server(data_dir: &Path) -> String {
    let ws = Arc::new(Workspace::open(data_dir, EngineConfig::default()).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(gpm_service::http::serve_listener(listener, ws));
    format!("http://{addr}")
}
