//! Segmentation features: pick a source tensor, pool heads per cell, and
//! reduce every cell to a short PCA descriptor shared across the stack.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor_store::{FeatureStack, StackError, Which};

/// Number of principal components kept per cell.
pub const PCA_COMPONENTS: usize = 10;

const COVARIANCE_CHUNK: usize = 2048;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Stack(#[from] StackError),
    #[error("layer {0:?} not found in stack")]
    LayerNotFound(String),
    #[error("stack has no encoder layer to segment on")]
    NoEncoderLayer,
    #[error("timestep not found: {0}")]
    TimestepNotFound(String),
    #[error("need at least {need} samples for PCA, have {have}")]
    InsufficientSamples { have: usize, need: usize },
    #[error("feature dimension mismatch: model has {expected}, input has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("grids disagree in size")]
    GridMismatch,
}

/// Serialized as `"final"` or `"average_from:<t0>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
#[derive(Default)]
pub enum TimestepMode {
    #[default]
    Final,
    AverageFrom(u32),
}


impl fmt::Display for TimestepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimestepMode::Final => f.write_str("final"),
            TimestepMode::AverageFrom(t) => write!(f, "average_from:{t}"),
        }
    }
}

impl From<TimestepMode> for String {
    fn from(mode: TimestepMode) -> String {
        mode.to_string()
    }
}

impl TryFrom<String> for TimestepMode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for TimestepMode {
    type Err = String;

    /// Accepts `final`, `average_from:<t0>` or `average_from(<t0>)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "final" {
            return Ok(TimestepMode::Final);
        }
        let rest = s
            .strip_prefix("average_from")
            .ok_or_else(|| format!("unknown timestep mode {s:?}"))?;
        let digits = rest
            .trim_start_matches([':', '(', '='])
            .trim_end_matches(')')
            .trim();
        digits
            .parse()
            .map(TimestepMode::AverageFrom)
            .map_err(|_| format!("bad start timestep in {s:?}"))
    }
}

/// Which stored tensor feeds the segmentation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub source: Which,
    /// `None` selects the first encoder layer.
    pub layer: Option<String>,
    pub timestep_mode: TimestepMode,
}

impl Default for FeatureSelection {
    fn default() -> Self {
        FeatureSelection {
            source: Which::K,
            layer: None,
            timestep_mode: TimestepMode::Final,
        }
    }
}

impl FeatureSelection {
    /// Stable string identifying this selection, used as a cache key.
    pub fn cache_key(&self) -> String {
        format!(
            "{}_{}_{}",
            self.source,
            self.layer.as_deref().unwrap_or("seg"),
            self.timestep_mode
        )
        .replace([':', '/'], "-")
    }

    pub fn resolve_layer<'a>(&self, stack: &'a FeatureStack) -> Result<&'a str, FeatureError> {
        let manifest = stack.manifest();
        match &self.layer {
            Some(id) => manifest
                .layer(id)
                .map(|l| l.layer_id.as_str())
                .ok_or_else(|| FeatureError::LayerNotFound(id.clone())),
            None => manifest
                .segmentation_layer()
                .map(|l| l.layer_id.as_str())
                .ok_or(FeatureError::NoEncoderLayer),
        }
    }

    pub fn resolve_timesteps(&self, stack: &FeatureStack) -> Result<Vec<u32>, FeatureError> {
        let timesteps = &stack.manifest().timesteps;
        match self.timestep_mode {
            TimestepMode::Final => timesteps
                .last()
                .map(|&t| vec![t])
                .ok_or_else(|| FeatureError::TimestepNotFound("stack has no timesteps".into())),
            TimestepMode::AverageFrom(t0) => {
                let picked: Vec<u32> = timesteps.iter().copied().filter(|&t| t >= t0).collect();
                if picked.is_empty() {
                    Err(FeatureError::TimestepNotFound(format!("no timestep >= {t0}")))
                } else {
                    Ok(picked)
                }
            }
        }
    }
}

/// Per-image cell features, `images[i][(y * width + x) * dim + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrids {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub images: Vec<Vec<f32>>,
}

impl FeatureGrids {
    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell(&self, image: usize, cell: usize) -> &[f32] {
        &self.images[image][cell * self.dim..(cell + 1) * self.dim]
    }

    fn check(&self) -> Result<(), FeatureError> {
        let len = self.cells() * self.dim;
        if self.images.iter().any(|g| g.len() != len) {
            return Err(FeatureError::GridMismatch);
        }
        Ok(())
    }
}

/// Reorders a (heads, h, w, dim) tensor into cell-major rows with heads concatenated.
pub fn heads_to_cells(tensor: &[f32], heads: usize, height: usize, width: usize, dim: usize) -> Vec<f32> {
    let d = heads * dim;
    let mut out = vec![0f32; height * width * d];
    for head in 0..heads {
        for cell in 0..height * width {
            let src = (head * height * width + cell) * dim;
            let dst = cell * d + head * dim;
            out[dst..dst + dim].copy_from_slice(&tensor[src..src + dim]);
        }
    }
    out
}

pub fn select_features(
    stack: &FeatureStack,
    sel: &FeatureSelection,
) -> Result<FeatureGrids, FeatureError> {
    let layer_id = sel.resolve_layer(stack)?;
    let layer = stack.layer(layer_id)?.clone();
    let timesteps = sel.resolve_timesteps(stack)?;

    let images = (0..stack.n_images())
        .into_par_iter()
        .map(|image| {
            let mut acc: Option<Vec<f32>> = None;
            for &t in &timesteps {
                let tensor = stack.tensor_f32(image, layer_id, t, sel.source)?;
                acc = Some(match acc {
                    None => tensor,
                    Some(mut sum) => {
                        sum.iter_mut().zip(&tensor).for_each(|(s, x)| *s += x);
                        sum
                    }
                });
            }
            let mut tensor = acc.expect("at least one timestep");
            if timesteps.len() > 1 {
                let n = timesteps.len() as f32;
                tensor.iter_mut().for_each(|x| *x /= n);
            }
            Ok(heads_to_cells(
                &tensor,
                layer.heads,
                layer.feat_height,
                layer.feat_width,
                layer.dim,
            ))
        })
        .collect::<Result<Vec<_>, FeatureError>>()?;

    Ok(FeatureGrids {
        width: layer.feat_width,
        height: layer.feat_height,
        dim: layer.heads * layer.dim,
        images,
    })
}

/// Principal axes fit jointly over every cell of every image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Row-major `n_components x dim`; each row a unit vector.
    pub basis: Vec<f64>,
    pub explained_variance: Vec<f64>,
    pub dim: usize,
    pub n_components: usize,
    pub n_samples: usize,
    /// Set when all samples were identical; the basis is then the first
    /// coordinate axes and all variances are zero.
    pub degenerate: bool,
}

impl PcaModel {
    pub fn component(&self, k: usize) -> &[f64] {
        &self.basis[k * self.dim..(k + 1) * self.dim]
    }

    pub fn project_one(&self, x: &[f32], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate().take(self.n_components) {
            let axis = self.component(k);
            *o = x
                .iter()
                .zip(&self.mean)
                .zip(axis)
                .map(|((&xi, &m), &a)| (xi as f64 - m) * a)
                .sum();
        }
    }
}

/// Flip `v` so that its largest-magnitude entry (first on ties) is positive.
pub fn normalize_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn fit_pca(grids: &FeatureGrids) -> Result<PcaModel, FeatureError> {
    grids.check()?;
    let dim = grids.dim;
    let n_components = PCA_COMPONENTS.min(dim);
    let n_samples = grids.cells() * grids.images.len();
    if n_samples < PCA_COMPONENTS || dim == 0 {
        return Err(FeatureError::InsufficientSamples {
            have: n_samples,
            need: PCA_COMPONENTS,
        });
    }

    let rows = || grids.images.iter().flat_map(|g| g.chunks_exact(dim));
    let first = rows().next().expect("non-empty");
    if rows().all(|r| r.iter().zip(first).all(|(a, b)| a.to_bits() == b.to_bits())) {
        let mut basis = vec![0.0; n_components * dim];
        for k in 0..n_components {
            basis[k * dim + k] = 1.0;
        }
        log::warn!("PCA input has a single distinct sample; using a fixed axis basis");
        return Ok(PcaModel {
            mean: first.iter().map(|&x| x as f64).collect(),
            basis,
            explained_variance: vec![0.0; n_components],
            dim,
            n_components,
            n_samples,
            degenerate: true,
        });
    }

    let mut mean = vec![0f64; dim];
    for row in rows() {
        mean.iter_mut().zip(row).for_each(|(m, &x)| *m += x as f64);
    }
    mean.iter_mut().for_each(|m| *m /= n_samples as f64);

    // Fixed-size chunks summed in order keep the result bit-reproducible
    // regardless of how rayon schedules the work.
    let all_rows: Vec<&[f32]> = rows().collect();
    let partials: Vec<DMatrix<f64>> = all_rows
        .par_chunks(COVARIANCE_CHUNK)
        .map(|chunk| {
            // Built transposed so the product runs through the blocked GEMM
            // kernel; `tr_mul` falls back to per-entry dot products.
            let centered_t =
                DMatrix::from_fn(dim, chunk.len(), |c, r| chunk[r][c] as f64 - mean[c]);
            &centered_t * centered_t.transpose()
        })
        .collect();
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for p in &partials {
        cov += p;
    }
    cov /= (n_samples - 1) as f64;
    // Symmetrize exactly; the partial products are symmetric up to rounding.
    for r in 0..dim {
        for c in r + 1..dim {
            let v = 0.5 * (cov[(r, c)] + cov[(c, r)]);
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut basis = Vec::with_capacity(n_components * dim);
    let mut explained_variance = Vec::with_capacity(n_components);
    for &idx in order.iter().take(n_components) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        normalize_sign(&mut v);
        basis.extend_from_slice(&v);
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }

    Ok(PcaModel {
        mean,
        basis,
        explained_variance,
        dim,
        n_components,
        n_samples,
        degenerate: false,
    })
}

/// Per-image PCA descriptors, `images[i][cell * n_components + k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedFeatures {
    pub width: usize,
    pub height: usize,
    pub n_components: usize,
    pub images: Vec<Vec<f64>>,
}

impl ReducedFeatures {
    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell(&self, image: usize, cell: usize) -> &[f64] {
        &self.images[image][cell * self.n_components..(cell + 1) * self.n_components]
    }
}

pub fn project(model: &PcaModel, grids: &FeatureGrids) -> Result<ReducedFeatures, FeatureError> {
    grids.check()?;
    if grids.dim != model.dim {
        return Err(FeatureError::DimensionMismatch {
            expected: model.dim,
            actual: grids.dim,
        });
    }
    let k = model.n_components;
    let images = grids
        .images
        .par_iter()
        .map(|g| {
            let mut out = vec![0f64; grids.cells() * k];
            for (row, dst) in g.chunks_exact(grids.dim).zip(out.chunks_exact_mut(k)) {
                model.project_one(row, dst);
            }
            out
        })
        .collect();
    Ok(ReducedFeatures {
        width: grids.width,
        height: grids.height,
        n_components: k,
        images,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grids_from_rows(rows: &[Vec<f32>], dim: usize) -> FeatureGrids {
        FeatureGrids {
            width: rows.len(),
            height: 1,
            dim,
            images: vec![rows.iter().flatten().copied().collect()],
        }
    }

    #[test]
    fn timestep_mode_parsing() {
        assert_eq!("final".parse::<TimestepMode>(), Ok(TimestepMode::Final));
        assert_eq!(
            "average_from:5".parse::<TimestepMode>(),
            Ok(TimestepMode::AverageFrom(5))
        );
        assert_eq!(
            "average_from(12)".parse::<TimestepMode>(),
            Ok(TimestepMode::AverageFrom(12))
        );
        assert!("mean".parse::<TimestepMode>().is_err());
    }

    #[test]
    fn selection_json_uses_string_modes() {
        let sel = FeatureSelection {
            timestep_mode: TimestepMode::AverageFrom(500),
            ..Default::default()
        };
        let json = serde_json::to_value(&sel).unwrap();
        assert_eq!(json["timestep_mode"], "average_from:500");
        assert_eq!(json["source"], "K");
        assert_eq!(serde_json::from_value::<FeatureSelection>(json).unwrap(), sel);
    }

    #[test]
    fn heads_are_concatenated_per_cell() {
        // 2 heads, 1x2 grid, dim 2: value = head*100 + cell*10 + d
        let mut t = Vec::new();
        for head in 0..2 {
            for cell in 0..2 {
                for d in 0..2 {
                    t.push((head * 100 + cell * 10 + d) as f32);
                }
            }
        }
        let cells = heads_to_cells(&t, 2, 1, 2, 2);
        assert_eq!(cells, vec![0., 1., 100., 101., 10., 11., 110., 111.]);
    }

    #[test]
    fn rank_one_data() {
        let dir = [3.0f32, -4.0, 0.0, 12.0];
        let rows: Vec<Vec<f32>> = (0..20)
            .map(|i| {
                let s = i as f32 - 7.0;
                dir.iter().enumerate().map(|(j, d)| 1.0 + j as f32 + s * d).collect()
            })
            .collect();
        let model = fit_pca(&grids_from_rows(&rows, 4)).unwrap();
        assert_eq!(model.n_components, 4);
        assert!(model.explained_variance[0] > 1.0);
        for v in &model.explained_variance[1..] {
            assert!(v.abs() < 1e-9 * model.explained_variance[0], "{v}");
        }
        let norm = 13.0;
        let axis = model.component(0);
        for (a, d) in axis.iter().zip(dir) {
            assert!((a - d as f64 / norm).abs() < 1e-9, "{a} vs {d}");
        }
    }

    #[test]
    fn identical_samples_are_flagged_degenerate() {
        let rows = vec![vec![1.5f32; 12]; 30];
        let model = fit_pca(&grids_from_rows(&rows, 12)).unwrap();
        assert!(model.degenerate);
        assert!(model.explained_variance.iter().all(|&v| v == 0.0));
        for k in 0..10 {
            for j in 0..10 {
                let dot: f64 = model
                    .component(k)
                    .iter()
                    .zip(model.component(j))
                    .map(|(a, b)| a * b)
                    .sum();
                assert_eq!(dot, if k == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn too_few_samples() {
        let rows = vec![vec![0f32, 1.0]; 9];
        assert!(matches!(
            fit_pca(&grids_from_rows(&rows, 2)),
            Err(FeatureError::InsufficientSamples { have: 9, .. })
        ));
    }

    #[test]
    fn ten_dim_frame_is_reproduced_up_to_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f32>> = (0..200)
            .map(|_| (0..10).map(|k| rng.random_range(-1.0..1.0) * (10 - k) as f32).collect())
            .collect();
        let grids = grids_from_rows(&rows, 10);
        let model = fit_pca(&grids).unwrap();
        let reduced = project(&model, &grids).unwrap();
        // Distances between all pairs are preserved: the map is an isometry.
        for a in 0..20 {
            for b in a + 1..20 {
                let d_in: f64 = rows[a]
                    .iter()
                    .zip(&rows[b])
                    .map(|(x, y)| ((x - y) as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let d_out: f64 = reduced
                    .cell(0, a)
                    .iter()
                    .zip(reduced.cell(0, b))
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((d_in - d_out).abs() <= 1e-4 * d_in, "{d_in} vs {d_out}");
            }
        }
    }

    #[test]
    fn projection_of_mean_and_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f32>> = (0..64)
            .map(|_| (0..16).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let model = fit_pca(&grids_from_rows(&rows, 16)).unwrap();
        let mut out = vec![0.0; 10];
        let mean32: Vec<f32> = model.mean.iter().map(|&m| m as f32).collect();
        model.project_one(&mean32, &mut out);
        assert!(out.iter().all(|v| v.abs() < 1e-5), "{out:?}");

        let shifted: Vec<f32> = model
            .mean
            .iter()
            .zip(model.component(0))
            .map(|(m, a)| (m + a) as f32)
            .collect();
        model.project_one(&shifted, &mut out);
        assert!((out[0] - 1.0).abs() < 1e-5);
        assert!(out[1..].iter().all(|v| v.abs() < 1e-5), "{out:?}");
    }

    #[test]
    fn dimension_mismatch() {
        let rows: Vec<Vec<f32>> = (0..20).map(|i| vec![i as f32, (i * i) as f32]).collect();
        let model = fit_pca(&grids_from_rows(&rows, 2)).unwrap();
        let other = grids_from_rows(&[vec![0f32; 3]], 3);
        assert!(matches!(
            project(&model, &other),
            Err(FeatureError::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn sign_convention() {
        let mut v = vec![0.1, -0.9, 0.3];
        normalize_sign(&mut v);
        assert_eq!(v, vec![-0.1, 0.9, -0.3]);
        let mut tie = vec![-0.5, 0.5];
        normalize_sign(&mut tie);
        assert_eq!(tie, vec![0.5, -0.5]);
    }
}
