use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::energy::EnergyModel;
use super::maxflow::{FlowGraph, Segment};
use super::GraphCutError;

/// Image index per feature cell, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
    pub energy: f64,
}

impl LabelMap {
    pub fn constant(width: usize, height: usize, label: u16) -> Self {
        LabelMap {
            width,
            height,
            labels: vec![label; width * height],
            energy: 0.0,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    /// Nearest-neighbour resample to `width x height`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Vec<u16> {
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                out.push(self.labels[sy * self.width + sx]);
            }
        }
        out
    }

    /// Hex SHA-256 over the dimensions and labels.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.width as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        for l in &self.labels {
            h.update(l.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn label_counts(&self, n_labels: usize) -> Vec<usize> {
        let mut counts = vec![0; n_labels];
        for &l in &self.labels {
            if let Some(c) = counts.get_mut(l as usize) {
                *c += 1;
            }
        }
        counts
    }
}

fn finish(model: &EnergyModel, labels: Vec<u16>) -> LabelMap {
    LabelMap {
        width: model.width(),
        height: model.height(),
        energy: model.energy(&labels),
        labels,
    }
}

/// Globally optimal two-label solution from a single s-t minimum cut.
///
/// Source side is label 0, so zero-cost ambiguities resolve to the lower label.
pub fn solve_binary(model: &EnergyModel) -> Result<LabelMap, GraphCutError> {
    if model.n_labels() != 2 {
        return Err(GraphCutError::NotBinary(model.n_labels()));
    }
    let cells = model.cells();
    let mut g = FlowGraph::with_capacity(cells, model.edges().len());
    g.add_nodes(cells);
    for p in 0..cells {
        // Being on the sink side means label 1.
        g.add_tweights(p, model.unary_scaled(p, 1), model.unary_scaled(p, 0));
    }
    for (e, &w) in model.edges().iter().zip(model.scaled_weights()) {
        g.add_edge(e.p as usize, e.q as usize, w, w);
    }
    g.maxflow();
    let labels = g
        .segments()
        .into_iter()
        .take(cells)
        .map(|s| match s {
            Segment::Source => 0,
            Segment::Sink => 1,
        })
        .collect();
    Ok(finish(model, labels))
}

/// Progress record of an α-expansion run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpansionTrace {
    /// Scaled energy of the initial labelling followed by one entry per accepted move.
    pub energies: Vec<i64>,
    pub sweeps: usize,
    pub moves_tried: usize,
}

impl ExpansionTrace {
    pub fn accepted_moves(&self) -> usize {
        self.energies.len().saturating_sub(1)
    }
}

/// Best labelling reachable from `labels` by switching any subset of cells to `alpha`.
///
/// Cells on the source side keep their label; the sink side switches. Pairs
/// whose current labels differ get an auxiliary node carrying their current
/// disagreement cost.
fn expansion_move(g: &mut FlowGraph, model: &EnergyModel, labels: &[u16], alpha: u16) -> Vec<u16> {
    let cells = model.cells();
    g.clear();
    g.add_nodes(cells);

    let mut cap_source: Vec<i64> = (0..cells).map(|p| model.unary_scaled(p, alpha)).collect();
    let mut cap_sink: Vec<i64> = (0..cells)
        .map(|p| model.unary_scaled(p, labels[p]))
        .collect();

    for (e, &w) in model.edges().iter().zip(model.scaled_weights()) {
        if w == 0 {
            continue;
        }
        let (p, q) = (e.p as usize, e.q as usize);
        let (lp, lq) = (labels[p], labels[q]);
        if lp == lq {
            if lp != alpha {
                g.add_edge(p, q, w, w);
            }
        } else if lp == alpha {
            // p is alpha either way; q pays unless it switches too.
            cap_sink[q] += w;
        } else if lq == alpha {
            cap_sink[p] += w;
        } else {
            let a = g.add_nodes(1);
            g.add_edge(p, a, w, w);
            g.add_edge(a, q, w, w);
            g.add_tweights(a, 0, w);
        }
    }
    for p in 0..cells {
        g.add_tweights(p, cap_source[p], cap_sink[p]);
    }
    cap_source.clear();
    cap_sink.clear();

    g.maxflow();
    g.segments()
        .into_iter()
        .take(cells)
        .zip(labels)
        .map(|(s, &l)| match s {
            Segment::Source => l,
            Segment::Sink => alpha,
        })
        .collect()
}

/// α-expansion from an all-base start, sweeping labels in ascending order
/// until a full sweep brings no strict decrease.
pub fn solve_alpha_expansion_traced(model: &EnergyModel) -> (LabelMap, ExpansionTrace) {
    let order: Vec<u16> = (0..model.n_labels() as u16).collect();
    solve_alpha_expansion_ordered(model, &order)
}

/// α-expansion visiting labels in the given order each sweep.
///
/// # Panics
/// If `order` is not a permutation of the model's labels.
pub fn solve_alpha_expansion_ordered(model: &EnergyModel, order: &[u16]) -> (LabelMap, ExpansionTrace) {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    assert!(
        sorted.iter().copied().eq(0..model.n_labels() as u16),
        "sweep order must be a permutation of 0..{}",
        model.n_labels()
    );
    let mut labels = vec![model.base_index() as u16; model.cells()];
    let mut energy = model.energy_scaled(&labels);
    let mut trace = ExpansionTrace {
        energies: vec![energy],
        ..Default::default()
    };
    if model.n_labels() > 1 {
        let mut g = FlowGraph::with_capacity(
            model.cells() + model.edges().len() / 4,
            model.edges().len() * 2,
        );
        // Moves failed in a row on the current labelling. Once every label
        // has failed, the rest of the sweep would repeat them verbatim.
        let mut failed = 0;
        'sweeps: loop {
            trace.sweeps += 1;
            let mut improved = false;
            for &alpha in order {
                trace.moves_tried += 1;
                let candidate = expansion_move(&mut g, model, &labels, alpha);
                let e = model.energy_scaled(&candidate);
                if e < energy {
                    labels = candidate;
                    energy = e;
                    trace.energies.push(e);
                    improved = true;
                    failed = 0;
                } else {
                    failed += 1;
                    if failed == order.len() {
                        break 'sweeps;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }
    (finish(model, labels), trace)
}

pub fn solve_alpha_expansion(model: &EnergyModel) -> LabelMap {
    solve_alpha_expansion_traced(model).0
}
