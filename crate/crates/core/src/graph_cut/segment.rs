use std::time::{Duration, Instant};

use thiserror::Error;

use super::energy::{build_energy, GraphCutParams};
use super::solve::{solve_alpha_expansion_traced, ExpansionTrace, LabelMap};
use super::strokes::{rasterize_strokes, StrokeError, StrokeSet};
use super::GraphCutError;
use crate::feature_prep::{
    fit_pca, project, select_features, FeatureError, FeatureSelection, PcaModel, ReducedFeatures,
};
use crate::tensor_store::FeatureStack;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("invalid strokes: {0}")]
    Stroke(#[from] StrokeError),
    #[error(transparent)]
    GraphCut(#[from] GraphCutError),
}

/// Wall-clock cost of each pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SegmentTiming {
    pub select: Duration,
    pub pca: Duration,
    pub rasterize: Duration,
    pub build: Duration,
    pub solve: Duration,
}

impl SegmentTiming {
    pub fn total(&self) -> Duration {
        self.select + self.pca + self.rasterize + self.build + self.solve
    }
}

/// PCA-reduced features for one (stack, selection); reusable across stroke edits.
#[derive(Debug, Clone)]
pub struct PreparedFeatures {
    pub selection: FeatureSelection,
    pub image_size: (usize, usize),
    pub pca: PcaModel,
    pub reduced: ReducedFeatures,
    pub timing: SegmentTiming,
}

#[derive(Debug, Clone)]
pub struct SegmentOutput {
    pub labels: LabelMap,
    pub trace: ExpansionTrace,
    pub timing: SegmentTiming,
}

pub fn prepare_features(
    stack: &FeatureStack,
    selection: &FeatureSelection,
) -> Result<PreparedFeatures, SegmentError> {
    let start = Instant::now();
    let grids = select_features(stack, selection)?;
    let select = start.elapsed();

    let start = Instant::now();
    let pca = fit_pca(&grids)?;
    let reduced = project(&pca, &grids)?;
    let pca_time = start.elapsed();

    Ok(PreparedFeatures {
        selection: selection.clone(),
        image_size: stack.size(),
        pca,
        reduced,
        timing: SegmentTiming {
            select,
            pca: pca_time,
            ..Default::default()
        },
    })
}

/// Rasterize, build and solve on already reduced features.
pub fn segment_prepared(
    prepared: &PreparedFeatures,
    strokes: &StrokeSet,
    params: &GraphCutParams,
) -> Result<SegmentOutput, SegmentError> {
    let reduced = &prepared.reduced;
    let (width, height) = prepared.image_size;
    strokes.validate(reduced.n_images(), width, height)?;
    let mut timing = SegmentTiming {
        select: prepared.timing.select,
        pca: prepared.timing.pca,
        ..Default::default()
    };

    let start = Instant::now();
    let designations =
        rasterize_strokes(strokes, prepared.image_size, (reduced.width, reduced.height))?;
    timing.rasterize = start.elapsed();

    let start = Instant::now();
    let model = build_energy(reduced, &designations, strokes.base_index, params)?;
    timing.build = start.elapsed();

    let start = Instant::now();
    let (labels, trace) = solve_alpha_expansion_traced(&model);
    timing.solve = start.elapsed();

    log::debug!(
        "segment: {} cells, {} labels, {} moves accepted, energy {:.3}, solve {:?}",
        model.cells(),
        model.n_labels(),
        trace.accepted_moves(),
        labels.energy,
        timing.solve
    );
    Ok(SegmentOutput {
        labels,
        trace,
        timing,
    })
}

/// Full pipeline: select features, fit PCA, rasterize strokes, build the energy, solve.
pub fn segment(
    stack: &FeatureStack,
    strokes: &StrokeSet,
    selection: &FeatureSelection,
    params: &GraphCutParams,
) -> Result<SegmentOutput, SegmentError> {
    let (w, h) = stack.size();
    strokes.validate(stack.n_images(), w, h)?;
    let prepared = prepare_features(stack, selection)?;
    segment_prepared(&prepared, strokes, params)
}
