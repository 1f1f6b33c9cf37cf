//! From a label map to composite attention features and pixel images.

mod bundle;
mod features;
mod masks;
mod pixels;
pub mod poisson;

use std::path::PathBuf;

use thiserror::Error;

use crate::imageio::ImageIoError;
use crate::tensor_store::{StackError, TensorError};

pub use bundle::{
    export_bundle, BundleLayer, BundleManifest, BundleTimestep, Provenance, QMixing, QSource,
    BUNDLE_VERSION,
};
pub use features::{composite_kv, composite_q, mix_tensors};
pub use masks::{build_masks, LayerMask, MaskPyramid};
pub use pixels::{pixel_composite, PixelComposite};
pub use poisson::{poisson_blend, try_poisson_blend, BlendOutcome, PoissonProblem};

#[derive(Debug, Error)]
pub enum CompositeError {
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("label grid is {actual:?}, expected {expected:?}")]
    LabelGridMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("label {label} out of range for {n_images} images")]
    LabelOutOfRange { label: u16, n_images: usize },
    #[error("no masks for layer {0:?}")]
    UnknownLayer(String),
    #[error("{what}: expected shape {expected:?}, got {actual} elements")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        actual: usize,
    },
    #[error("base index {0} out of range")]
    BadBase(usize),
    #[error("stack has no images")]
    EmptyStack,
    #[error("images differ in size")]
    ImageSizeMismatch,
    #[error("no base-image pixels to anchor the blend")]
    NoBoundary,
}
