use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::strokes::Designations;
use super::GraphCutError;
use crate::feature_prep::ReducedFeatures;

/// Costs inside the flow network are integers: weight * 2^20, rounded.
pub const COST_SCALE: f64 = (1u64 << 20) as f64;

pub fn scale_cost(value: f64) -> i64 {
    (value * COST_SCALE).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphCutParams {
    /// Penalty for leaving a stroked cell without its designated label.
    #[serde(rename = "C")]
    pub c: f64,
    pub lambda: f64,
    pub sigma: f64,
}

impl Default for GraphCutParams {
    fn default() -> Self {
        GraphCutParams {
            c: 1e6,
            lambda: 100.0,
            sigma: 10.0,
        }
    }
}

impl GraphCutParams {
    /// Stacks from the larger SDXL backbone segment better with a wider falloff.
    pub fn sdxl() -> Self {
        GraphCutParams {
            sigma: 25.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GraphCutError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.c) && ok(self.lambda) && ok(self.sigma) {
            Ok(())
        } else {
            Err(GraphCutError::BadParams(*self))
        }
    }

    /// Pairwise weight contributed by one image at feature distance `dist`.
    pub fn falloff(&self, dist: f64) -> f64 {
        self.lambda * (-dist / (2.0 * self.sigma)).exp()
    }
}

/// A 4-neighbour pair with its disagreement cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub p: u32,
    pub q: u32,
    pub weight: f64,
}

/// Potts energy over a `width x height` grid of cells.
///
/// Unary: `C` for any label other than the designated one at stroked cells,
/// zero elsewhere. Pairwise: `weight` whenever the two labels differ.
#[derive(Debug, Clone)]
pub struct EnergyModel {
    width: usize,
    height: usize,
    n_labels: usize,
    base_index: usize,
    designations: Vec<Option<u16>>,
    edges: Vec<Edge>,
    params: GraphCutParams,
    scaled_c: i64,
    scaled_weights: Vec<i64>,
}

/// Pairs in canonical order: for each cell row-major, its right then lower neighbour.
pub fn grid_edges(width: usize, height: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(2 * width * height);
    for y in 0..height {
        for x in 0..width {
            let p = (y * width + x) as u32;
            if x + 1 < width {
                out.push((p, p + 1));
            }
            if y + 1 < height {
                out.push((p, p + width as u32));
            }
        }
    }
    out
}

impl EnergyModel {
    /// Assembles a model from explicit parts. Edge weights must be positive
    /// and finite; designations must name valid labels.
    pub fn from_parts(
        width: usize,
        height: usize,
        n_labels: usize,
        base_index: usize,
        designations: Vec<Option<u16>>,
        edges: Vec<Edge>,
        params: GraphCutParams,
    ) -> Result<Self, GraphCutError> {
        params.validate()?;
        let cells = width * height;
        if n_labels == 0 || n_labels > u16::MAX as usize {
            return Err(GraphCutError::BadLabelCount(n_labels));
        }
        if base_index >= n_labels {
            return Err(GraphCutError::BadBase {
                base: base_index,
                n_labels,
            });
        }
        if designations.len() != cells {
            return Err(GraphCutError::ShapeMismatch {
                expected: (width, height),
                actual: designations.len(),
            });
        }
        if let Some(bad) = designations
            .iter()
            .flatten()
            .find(|&&l| l as usize >= n_labels)
        {
            return Err(GraphCutError::BadDesignation(*bad as usize));
        }
        for e in &edges {
            if e.p as usize >= cells || e.q as usize >= cells || e.p == e.q {
                return Err(GraphCutError::BadEdge(e.p, e.q));
            }
            if !(e.weight.is_finite() && e.weight >= 0.0) {
                return Err(GraphCutError::BadWeight(e.weight));
            }
        }
        let scaled_weights = edges.iter().map(|e| scale_cost(e.weight)).collect();
        Ok(EnergyModel {
            width,
            height,
            n_labels,
            base_index,
            designations,
            edges,
            scaled_c: scale_cost(params.c),
            params,
            scaled_weights,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn base_index(&self) -> usize {
        self.base_index
    }

    pub fn params(&self) -> &GraphCutParams {
        &self.params
    }

    pub fn designations(&self) -> &[Option<u16>] {
        &self.designations
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub(crate) fn scaled_weights(&self) -> &[i64] {
        &self.scaled_weights
    }

    pub fn unary(&self, cell: usize, label: u16) -> f64 {
        match self.designations[cell] {
            Some(d) if d != label => self.params.c,
            _ => 0.0,
        }
    }

    pub(crate) fn unary_scaled(&self, cell: usize, label: u16) -> i64 {
        match self.designations[cell] {
            Some(d) if d != label => self.scaled_c,
            _ => 0,
        }
    }

    pub fn energy(&self, labels: &[u16]) -> f64 {
        assert_eq!(labels.len(), self.cells());
        let unary: f64 = labels
            .iter()
            .enumerate()
            .map(|(p, &l)| self.unary(p, l))
            .sum();
        let pairwise: f64 = self
            .edges
            .iter()
            .filter(|e| labels[e.p as usize] != labels[e.q as usize])
            .map(|e| e.weight)
            .sum();
        unary + pairwise
    }

    /// Energy in the integer units used by the flow network; exact.
    pub fn energy_scaled(&self, labels: &[u16]) -> i64 {
        assert_eq!(labels.len(), self.cells());
        let unary: i64 = labels
            .iter()
            .enumerate()
            .map(|(p, &l)| self.unary_scaled(p, l))
            .sum();
        let pairwise: i64 = self
            .edges
            .iter()
            .zip(&self.scaled_weights)
            .filter(|(e, _)| labels[e.p as usize] != labels[e.q as usize])
            .map(|(_, &w)| w)
            .sum();
        unary + pairwise
    }
}

/// Builds the stroke-constrained Potts energy on the PCA feature grid.
///
/// Each 4-neighbour pair gets `sum_i lambda * exp(-|f_i(p) - f_i(q)| / (2 sigma))`
/// over all images, with the L2 norm on the reduced descriptors.
pub fn build_energy(
    feats: &ReducedFeatures,
    designations: &Designations,
    base_index: usize,
    params: &GraphCutParams,
) -> Result<EnergyModel, GraphCutError> {
    if (designations.width, designations.height) != (feats.width, feats.height) {
        return Err(GraphCutError::ShapeMismatch {
            expected: (feats.width, feats.height),
            actual: designations.cells.len(),
        });
    }
    params.validate()?;
    let edges = grid_edges(feats.width, feats.height)
        .into_par_iter()
        .map(|(p, q)| {
            let weight = (0..feats.n_images())
                .map(|i| {
                    let dist = feats
                        .cell(i, p as usize)
                        .iter()
                        .zip(feats.cell(i, q as usize))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    params.falloff(dist)
                })
                .sum();
            Edge { p, q, weight }
        })
        .collect();
    EnergyModel::from_parts(
        feats.width,
        feats.height,
        feats.n_images(),
        base_index,
        designations.cells.clone(),
        edges,
        *params,
    )
}
