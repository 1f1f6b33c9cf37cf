//! Compositing engine for stacks of spatially aligned generated images.
//!
//! The pipeline takes per-layer attention features dumped during generation,
//! reduces the segmentation features with PCA, solves a Potts multi-label
//! graph cut constrained by user strokes, and turns the resulting label map
//! into composite attention features, pixel previews and quality metrics.

pub mod compositor;
pub mod config;
pub mod feature_prep;
pub mod graph_cut;
pub mod imageio;
pub mod metrics;
pub mod synthetic;
pub mod tensor_store;

pub use feature_prep::{FeatureSelection, PcaModel, ReducedFeatures, TimestepMode};
pub use graph_cut::{
    segment, EnergyModel, GraphCutParams, LabelMap, SegmentError, SegmentOutput, Stroke,
    StrokeSet,
};
pub use tensor_store::{load_stack, FeatureStack, StackManifest, TensorBlob};
