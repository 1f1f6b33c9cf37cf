//! On-disk feature stacks: GPMT tensor blobs plus a JSON manifest.

mod blob;
mod manifest;
mod stack;

use std::path::PathBuf;

use thiserror::Error;

pub use blob::{
    read_blob, read_blob_header, write_blob, BlobHeader, DType, TensorBlob, TensorData,
    TensorError, MAGIC, VERSION,
};
pub use manifest::{LayerRecord, LayerRole, StackManifest, TensorKey, Which, MANIFEST_VERSION};
pub use stack::{load_stack, FeatureStack};

#[derive(Debug, Error)]
pub enum StackError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("layer {layer:?} feature size {feat:?} does not divide image size {image:?}")]
    LayerNotDivisible {
        layer: String,
        feat: (usize, usize),
        image: (usize, usize),
    },
    #[error("missing tensor {key} (image {image}, layer {layer}, timestep {timestep}, {which})")]
    MissingTensor {
        key: String,
        image: usize,
        layer: String,
        timestep: u32,
        which: Which,
    },
    #[error("tensor {key} has shape {actual:?}, manifest declares {expected:?}")]
    ShapeMismatch {
        key: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("image {index} is {actual:?}, stack is {expected:?}")]
    ImageSizeMismatch {
        index: usize,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("cannot decode image {index}: {message}")]
    BadImage { index: usize, message: String },
    #[error("tensor {key}: {source}")]
    Tensor {
        key: String,
        #[source]
        source: TensorError,
    },
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),
}

impl StackError {
    pub(crate) fn missing(key: &TensorKey) -> Self {
        StackError::MissingTensor {
            key: key.to_string(),
            image: key.image,
            layer: key.layer.clone(),
            timestep: key.timestep,
            which: key.which,
        }
    }
}
