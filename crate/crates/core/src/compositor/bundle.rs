use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::feature_prep::FeatureSelection;
use crate::graph_cut::{GraphCutParams, LabelMap};
use crate::imageio::{write_label_png, write_rgb_png};
use crate::tensor_store::{write_blob, FeatureStack, TensorBlob, TensorKey, Which};

use super::features::composite_kv;
use super::masks::{build_masks, MaskPyramid};
use super::pixels::pixel_composite;
use super::CompositeError;

pub const BUNDLE_VERSION: u32 = 1;

/// What produced a bundle.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stack_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<GraphCutParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<FeatureSelection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleTimestep {
    pub timestep: u32,
    #[serde(rename = "K")]
    pub k: String,
    #[serde(rename = "V")]
    pub v: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleLayer {
    pub layer_id: String,
    pub feat_width: usize,
    pub feat_height: usize,
    /// One-hot masks, f32 of shape (n_images, height, width).
    pub masks: String,
    pub timesteps: Vec<BundleTimestep>,
}

/// Stored query tensor to use outside the base region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSource {
    pub image: usize,
    pub layer_id: String,
    pub timestep: u32,
    /// Absolute path of the stored Q blob.
    pub path: String,
}

/// How the blending pass assembles queries: live queries where the base
/// mask is set, the listed stored queries elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QMixing {
    pub base_index: usize,
    pub q_sources: Vec<QSource>,
}

/// Contents of `bundle.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u32,
    pub n_images: usize,
    pub width: usize,
    pub height: usize,
    pub base_index: usize,
    #[serde(default)]
    pub base_seed: Option<u64>,
    #[serde(default)]
    pub base_prompt: Option<String>,
    pub label_grid: (usize, usize),
    pub label_map_hash: String,
    pub provenance: Provenance,
    pub layers: Vec<BundleLayer>,
    pub q_mixing: QMixing,
    pub preview: String,
    pub labels: String,
}

fn one_hot_blob(masks: &MaskPyramid, layer: &str) -> Result<TensorBlob, CompositeError> {
    let l = masks.layer(layer)?;
    let data: Vec<f32> = masks
        .one_hot(layer)?
        .into_iter()
        .flatten()
        .map(f32::from)
        .collect();
    Ok(TensorBlob::from_f32(vec![masks.n_images, l.height, l.width], data)?)
}

fn create_dir(path: &Path) -> Result<(), CompositeError> {
    fs::create_dir_all(path).map_err(|source| CompositeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a complete composite bundle for every layer and timestep of the stack.
pub fn export_bundle(
    stack: &FeatureStack,
    labels: &LabelMap,
    base_index: usize,
    provenance: Provenance,
    out_dir: impl AsRef<Path>,
) -> Result<BundleManifest, CompositeError> {
    let out_dir = out_dir.as_ref();
    if base_index >= stack.n_images() {
        return Err(CompositeError::BadBase(base_index));
    }
    let manifest = stack.manifest();
    let masks = build_masks(labels, manifest)?;
    create_dir(&out_dir.join("masks"))?;
    create_dir(&out_dir.join("kv"))?;

    let stack_root = stack
        .root()
        .canonicalize()
        .unwrap_or_else(|_| stack.root().to_path_buf());
    let mut layers = Vec::new();
    let mut q_sources = Vec::new();
    for record in &manifest.layers {
        let id = &record.layer_id;
        let mask_rel = format!("masks/{id}.gpmt");
        write_blob(out_dir.join(&mask_rel), &one_hot_blob(&masks, id)?)?;

        let used: Vec<bool> = {
            let l = masks.layer(id)?;
            (0..stack.n_images())
                .map(|i| l.labels.iter().any(|&x| x as usize == i))
                .collect()
        };
        let mut timesteps = Vec::new();
        for &t in &manifest.timesteps {
            let (k, v) = composite_kv(stack, &masks, id, t)?;
            let k_rel = format!("kv/{id}_{t}_K.gpmt");
            let v_rel = format!("kv/{id}_{t}_V.gpmt");
            write_blob(out_dir.join(&k_rel), &k)?;
            write_blob(out_dir.join(&v_rel), &v)?;
            timesteps.push(BundleTimestep {
                timestep: t,
                k: k_rel,
                v: v_rel,
            });
            for (image, _) in used.iter().enumerate().filter(|(i, &u)| u && *i != base_index) {
                let key = TensorKey::new(image, id.clone(), t, Which::Q);
                let rel = manifest
                    .tensor_path(&key)
                    .ok_or_else(|| crate::tensor_store::StackError::missing(&key))?;
                q_sources.push(QSource {
                    image,
                    layer_id: id.clone(),
                    timestep: t,
                    path: stack_root.join(rel).display().to_string(),
                });
            }
        }
        layers.push(BundleLayer {
            layer_id: id.clone(),
            feat_width: record.feat_width,
            feat_height: record.feat_height,
            masks: mask_rel,
            timesteps,
        });
    }

    let preview = pixel_composite(stack.images(), labels)?;
    write_rgb_png(out_dir.join("preview.png"), &preview.image)?;
    write_label_png(out_dir.join("labels.png"), labels, stack.n_images())?;

    let bundle = BundleManifest {
        version: BUNDLE_VERSION,
        n_images: stack.n_images(),
        width: manifest.width,
        height: manifest.height,
        base_index,
        base_seed: manifest.seeds.get(base_index).copied(),
        base_prompt: manifest.prompts.get(base_index).cloned(),
        label_grid: (labels.width, labels.height),
        label_map_hash: labels.content_hash(),
        provenance,
        layers,
        q_mixing: QMixing {
            base_index,
            q_sources,
        },
        preview: "preview.png".into(),
        labels: "labels.png".into(),
    };
    let json_path: PathBuf = out_dir.join("bundle.json");
    let text = serde_json::to_string_pretty(&bundle).expect("bundle manifest serializes");
    fs::write(&json_path, text).map_err(|source| CompositeError::Io {
        path: json_path,
        source,
    })?;
    Ok(bundle)
}
