//! Stroke-constrained multi-label graph cut on the feature grid.

mod energy;
pub mod maxflow;
mod segment;
mod solve;
mod strokes;

use thiserror::Error;

pub use energy::{build_energy, grid_edges, scale_cost, Edge, EnergyModel, GraphCutParams, COST_SCALE};
pub use segment::{
    prepare_features, segment, segment_prepared, PreparedFeatures, SegmentError, SegmentOutput,
    SegmentTiming,
};
pub use solve::{
    solve_alpha_expansion, solve_alpha_expansion_ordered, solve_alpha_expansion_traced, solve_binary, ExpansionTrace, LabelMap,
};
pub use strokes::{rasterize_strokes, Designations, Stroke, StrokeError, StrokeSet};

#[derive(Debug, Error)]
pub enum GraphCutError {
    #[error("image size {image:?} is not a multiple of grid size {grid:?}")]
    GridNotDivisible {
        image: (usize, usize),
        grid: (usize, usize),
    },
    #[error("grid shape mismatch: expected {expected:?}, got {actual} cells")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: usize,
    },
    #[error("label count {0} out of range")]
    BadLabelCount(usize),
    #[error("base index {base} out of range for {n_labels} labels")]
    BadBase { base: usize, n_labels: usize },
    #[error("designated label {0} out of range")]
    BadDesignation(usize),
    #[error("invalid edge ({0}, {1})")]
    BadEdge(u32, u32),
    #[error("edge weight {0} is not a finite non-negative number")]
    BadWeight(f64),
    #[error("graph-cut parameters must be finite and positive: {0:?}")]
    BadParams(GraphCutParams),
    #[error("binary solver needs exactly 2 labels, model has {0}")]
    NotBinary(usize),
}
