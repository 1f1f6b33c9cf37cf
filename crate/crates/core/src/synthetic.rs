//! Deterministic synthetic stacks and random solver instances for tests,
//! benchmarks and demos. No diffusion model is involved.
//!
//! A synthetic stack splits the canvas into vertical stripes ("regions").
//! All images share the layout, as generations from one prompt tend to, but
//! differ in texture. Features are a per-region prototype plus a small
//! per-image offset plus noise, so the region boundaries are the cheapest
//! places for a seam.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use half::f16;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph_cut::{grid_edges, Edge, EnergyModel, GraphCutParams};
use crate::imageio::{palette_color, write_rgb_png, ImageIoError};
use crate::tensor_store::{
    write_blob, DType, LayerRecord, LayerRole, StackManifest, TensorBlob, TensorError,
    TensorKey, MANIFEST_VERSION,
};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("invalid synthetic config: {0}")]
    Config(String),
}

/// Relative path used for a tensor inside a generated stack.
pub fn tensor_rel_path(key: &TensorKey) -> String {
    format!(
        "tensors/{}_{}_{}_{}.gpmt",
        key.image, key.layer, key.timestep, key.which
    )
}

/// Manifest with `layers` named `layer0`, `layer1`, ...; the first is the
/// encoder. Single head, dim 4, timesteps `[10, 0]`. Nothing is written.
pub fn test_manifest(
    n_images: usize,
    width: usize,
    height: usize,
    layers: &[(usize, usize)],
) -> StackManifest {
    let layers = layers
        .iter()
        .enumerate()
        .map(|(i, &(w, h))| LayerRecord {
            layer_id: format!("layer{i}"),
            role: if i == 0 {
                LayerRole::Encoder
            } else {
                LayerRole::Decoder
            },
            feat_width: w,
            feat_height: h,
            heads: 1,
            dim: 4,
        })
        .collect();
    let mut manifest = StackManifest {
        version: MANIFEST_VERSION,
        n_images,
        width,
        height,
        images: (0..n_images).map(|i| format!("images/{i}.png")).collect(),
        layers,
        timesteps: vec![10, 0],
        tensors: BTreeMap::new(),
        prompts: Vec::new(),
        seeds: Vec::new(),
    };
    manifest.tensors = manifest
        .all_keys()
        .map(|k| (k.to_string(), tensor_rel_path(&k)))
        .collect();
    manifest
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_images: usize,
    pub width: usize,
    pub height: usize,
    pub layers: Vec<LayerRecord>,
    pub timesteps: Vec<u32>,
    pub dtype: DType,
    /// Number of vertical stripes sharing a feature prototype.
    pub regions: usize,
    /// Distance scale between region prototypes.
    pub prototype_scale: f32,
    /// Uniform noise amplitude added to every feature entry.
    pub noise: f32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_images: 3,
            width: 64,
            height: 64,
            layers: vec![
                layer("down_0", LayerRole::Encoder, 16, 16, 2, 8),
                layer("mid", LayerRole::Middle, 8, 8, 2, 8),
                layer("up_0", LayerRole::Decoder, 16, 16, 2, 8),
            ],
            timesteps: vec![801, 401, 1],
            dtype: DType::F32,
            regions: 2,
            prototype_scale: 4.0,
            noise: 0.3,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    /// A 512x512 stack with a 64x64 segmentation grid and 320-dim features
    /// per cell, roughly the shape of a Stable Diffusion 1.5 encoder layer.
    pub fn sd15_like(n_images: usize) -> Self {
        SyntheticConfig {
            n_images,
            width: 512,
            height: 512,
            layers: vec![
                layer("down_0", LayerRole::Encoder, 64, 64, 8, 40),
                layer("up_3", LayerRole::Decoder, 32, 32, 8, 40),
            ],
            timesteps: vec![1],
            ..SyntheticConfig::default()
        }
    }

    /// Region index of a cell at column `x` of a grid `width` wide.
    pub fn region_of(&self, x: usize, width: usize) -> usize {
        x * self.regions / width
    }

    fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: &str| Err(SyntheticError::Config(m.to_string()));
        if self.n_images == 0 || self.regions == 0 || self.layers.is_empty() {
            return bad("n_images, regions and layers must be nonzero");
        }
        if self.timesteps.is_empty() {
            return bad("at least one timestep is required");
        }
        for l in &self.layers {
            if l.feat_width % self.regions != 0 {
                return bad("every layer width must be a multiple of regions");
            }
        }
        if !self.width.is_multiple_of(self.regions) {
            return bad("image width must be a multiple of regions");
        }
        Ok(())
    }
}

pub fn layer(
    id: &str,
    role: LayerRole,
    feat_width: usize,
    feat_height: usize,
    heads: usize,
    dim: usize,
) -> LayerRecord {
    LayerRecord {
        layer_id: id.to_string(),
        role,
        feat_width,
        feat_height,
        heads,
        dim,
    }
}

fn rng_for(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut s = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        s = s.rotate_left(17) ^ p.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        s = s.wrapping_mul(0x94D0_49BB_1331_11EB);
    }
    ChaCha8Rng::seed_from_u64(s)
}

fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, amplitude: f32) -> Vec<f32> {
    (0..len)
        .map(|_| rng.random_range(-1.0f32..=1.0) * amplitude)
        .collect()
}

/// The RGB image for stack member `index`.
///
/// All members share the stripe layout and texture frequency; they differ
/// in texture phase and amplitude and in how strongly the stripes contrast
/// with the first one (from 0.6x to 1.4x across the stack).
pub fn synthetic_image(cfg: &SyntheticConfig, index: usize) -> RgbImage {
    let mut rng = rng_for(cfg.seed, &[0xA11CE]);
    let fx = rng.random_range(0.05..0.35);
    let fy = rng.random_range(0.05..0.35);
    let phase = rng_for(cfg.seed, &[0xA11CE, index as u64]).random_range(0.0..std::f64::consts::TAU);
    let spread = if cfg.n_images > 1 {
        index as f64 / (cfg.n_images - 1) as f64
    } else {
        0.5
    };
    let contrast = 0.6 + 0.8 * spread;
    let amplitude = 8.0 + 8.0 * spread;
    let colors: Vec<[f64; 3]> = (0..cfg.regions)
        .map(|r| palette_color(r).map(|c| 40.0 + 0.6 * c as f64))
        .collect();
    let base: Vec<[f64; 3]> = colors
        .iter()
        .map(|c| std::array::from_fn(|k| colors[0][k] + contrast * (c[k] - colors[0][k])))
        .collect();
    RgbImage::from_fn(cfg.width as u32, cfg.height as u32, |x, y| {
        let r = cfg.region_of(x as usize, cfg.width);
        let t = amplitude * (fx * x as f64 + fy * y as f64 + phase).sin();
        Rgb(std::array::from_fn(|c| {
            (base[r][c] + t * (1.0 - 0.25 * c as f64)).round().clamp(0.0, 255.0) as u8
        }))
    })
}

/// The (heads, h, w, dim) tensor for one key.
pub fn synthetic_tensor(cfg: &SyntheticConfig, layer_index: usize, key: &TensorKey) -> Vec<f32> {
    let l = &cfg.layers[layer_index];
    let d = l.heads * l.dim;
    let which = key.which as u64;
    let prototypes: Vec<Vec<f32>> = (0..cfg.regions)
        .map(|r| {
            let mut rng = rng_for(cfg.seed, &[0xBEEF, layer_index as u64, which, r as u64]);
            uniform_vec(&mut rng, d, cfg.prototype_scale)
        })
        .collect();
    let offset = {
        let mut rng = rng_for(cfg.seed, &[0x0FF5E7, layer_index as u64, which, key.image as u64]);
        uniform_vec(&mut rng, d, 0.1 * cfg.prototype_scale)
    };
    let mut rng = rng_for(
        cfg.seed,
        &[0x5EED, layer_index as u64, which, key.image as u64, key.timestep as u64],
    );
    let (w, h) = (l.feat_width, l.feat_height);
    let mut out = vec![0.0f32; l.tensor_len()];
    for y in 0..h {
        for x in 0..w {
            let proto = &prototypes[cfg.region_of(x, w)];
            for head in 0..l.heads {
                for k in 0..l.dim {
                    let j = head * l.dim + k;
                    let noise = rng.random_range(-1.0f32..=1.0) * cfg.noise;
                    out[((head * h + y) * w + x) * l.dim + k] = proto[j] + offset[j] + noise;
                }
            }
        }
    }
    out
}

fn mkdir(path: &Path) -> Result<(), SyntheticError> {
    fs::create_dir_all(path).map_err(|source| SyntheticError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a full stack (images, Q/K/V for every layer and timestep, and
/// `manifest.json`) under `dir`. Returns the manifest path.
pub fn write_synthetic_stack(
    dir: impl AsRef<Path>,
    cfg: &SyntheticConfig,
) -> Result<PathBuf, SyntheticError> {
    cfg.validate()?;
    let dir = dir.as_ref();
    mkdir(&dir.join("images"))?;
    mkdir(&dir.join("tensors"))?;

    let mut images = Vec::new();
    for i in 0..cfg.n_images {
        let rel = format!("images/{i}.png");
        write_rgb_png(dir.join(&rel), &synthetic_image(cfg, i))?;
        images.push(rel);
    }
    let mut manifest = StackManifest {
        version: MANIFEST_VERSION,
        n_images: cfg.n_images,
        width: cfg.width,
        height: cfg.height,
        images,
        layers: cfg.layers.clone(),
        timesteps: cfg.timesteps.clone(),
        tensors: BTreeMap::new(),
        prompts: (0..cfg.n_images)
            .map(|i| format!("synthetic stack member {i}"))
            .collect(),
        seeds: (0..cfg.n_images as u64).map(|i| cfg.seed * 1000 + i).collect(),
    };
    let keys: Vec<TensorKey> = manifest.all_keys().collect();
    for key in keys {
        let li = cfg
            .layers
            .iter()
            .position(|l| l.layer_id == key.layer)
            .expect("key comes from the config's layers");
        let l = &cfg.layers[li];
        let shape = l.tensor_shape().to_vec();
        let data = synthetic_tensor(cfg, li, &key);
        let blob = match cfg.dtype {
            DType::F32 => TensorBlob::from_f32(shape, data)?,
            DType::F16 => {
                TensorBlob::from_f16(shape, data.into_iter().map(f16::from_f32).collect())?
            }
        };
        let rel = tensor_rel_path(&key);
        write_blob(dir.join(&rel), &blob)?;
        manifest.tensors.insert(key.to_string(), rel);
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|source| SyntheticError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// A random Potts instance on a grid: edge weights uniform in
/// `(0, max_weight]`, each cell stroked with probability `stroke_prob`.
#[allow(clippy::too_many_arguments)]
pub fn random_instance(
    rng: &mut impl Rng,
    width: usize,
    height: usize,
    n_labels: usize,
    base_index: usize,
    max_weight: f64,
    stroke_prob: f64,
    params: GraphCutParams,
) -> EnergyModel {
    let designations = (0..width * height)
        .map(|_| {
            rng.random_bool(stroke_prob)
                .then(|| rng.random_range(0..n_labels) as u16)
        })
        .collect();
    let edges = grid_edges(width, height)
        .into_iter()
        .map(|(p, q)| Edge {
            p,
            q,
            weight: max_weight * (1.0 - rng.random::<f64>()),
        })
        .collect();
    EnergyModel::from_parts(
        width,
        height,
        n_labels,
        base_index,
        designations,
        edges,
        params,
    )
    .expect("random instance is well formed")
}

/// Exhaustive minimum of the scaled energy; feasible only for tiny grids.
pub fn brute_force_minimum(model: &EnergyModel) -> (Vec<u16>, i64) {
    let cells = model.cells();
    let n = model.n_labels() as u64;
    let total = n.checked_pow(cells as u32).expect("instance too large");
    let mut labels = vec![0u16; cells];
    let mut best = (labels.clone(), i64::MAX);
    for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = (c % n) as u16;
            c /= n;
        }
        let e = model.energy_scaled(&labels);
        if e < best.1 {
            best = (labels.clone(), e);
        }
    }
    best
}
