use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::blob::DType;
use super::StackError;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Which {
    Q,
    K,
    V,
}

impl Which {
    pub const ALL: [Which; 3] = [Which::Q, Which::K, Which::V];

    pub fn as_str(self) -> &'static str {
        match self {
            Which::Q => "Q",
            Which::K => "K",
            Which::V => "V",
        }
    }
}

impl fmt::Display for Which {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Which {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Q" | "q" => Ok(Which::Q),
            "K" | "k" => Ok(Which::K),
            "V" | "v" => Ok(Which::V),
            other => Err(format!("unknown feature source {other:?} (expected Q, K or V)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerRole {
    Encoder,
    Middle,
    Decoder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer_id: String,
    pub role: LayerRole,
    pub feat_width: usize,
    pub feat_height: usize,
    pub heads: usize,
    pub dim: usize,
}

impl LayerRecord {
    /// Blob shape of every Q/K/V tensor in this layer: (heads, height, width, dim).
    pub fn tensor_shape(&self) -> [usize; 4] {
        [self.heads, self.feat_height, self.feat_width, self.dim]
    }

    pub fn tensor_len(&self) -> usize {
        self.tensor_shape().iter().product()
    }

    pub fn cells(&self) -> usize {
        self.feat_width * self.feat_height
    }
}

/// Address of one stored tensor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorKey {
    pub image: usize,
    pub layer: String,
    pub timestep: u32,
    pub which: Which,
}

impl TensorKey {
    pub fn new(image: usize, layer: impl Into<String>, timestep: u32, which: Which) -> Self {
        TensorKey {
            image,
            layer: layer.into(),
            timestep,
            which,
        }
    }
}

impl fmt::Display for TensorKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}/{}", self.image, self.layer, self.timestep, self.which)
    }
}

/// JSON description of an image stack and where each feature tensor lives.
///
/// Paths in `images` and `tensors` are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub version: u32,
    pub n_images: usize,
    pub width: usize,
    pub height: usize,
    pub images: Vec<String>,
    pub layers: Vec<LayerRecord>,
    pub timesteps: Vec<u32>,
    pub tensors: BTreeMap<String, String>,
    #[serde(default)]
    pub prompts: Vec<String>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl StackManifest {
    pub fn layer(&self, layer_id: &str) -> Option<&LayerRecord> {
        self.layers.iter().find(|l| l.layer_id == layer_id)
    }

    /// The first encoder layer; the default segmentation substrate.
    pub fn segmentation_layer(&self) -> Option<&LayerRecord> {
        self.layers.iter().find(|l| l.role == LayerRole::Encoder)
    }

    pub fn final_timestep(&self) -> Option<u32> {
        self.timesteps.last().copied()
    }

    pub fn tensor_path(&self, key: &TensorKey) -> Option<&str> {
        self.tensors.get(&key.to_string()).map(String::as_str)
    }

    pub fn all_keys(&self) -> impl Iterator<Item = TensorKey> + '_ {
        (0..self.n_images).flat_map(move |image| {
            self.layers.iter().flat_map(move |layer| {
                self.timesteps.iter().flat_map(move |&t| {
                    Which::ALL
                        .iter()
                        .map(move |&w| TensorKey::new(image, layer.layer_id.clone(), t, w))
                })
            })
        })
    }

    /// Bytes occupied by one image's full Q/K/V dump at the given dtype.
    pub fn storage_bytes_per_image(&self, dtype: DType) -> u64 {
        let header = 8 + 8 * 4;
        let per_timestep: u64 = self
            .layers
            .iter()
            .map(|l| 3 * (header + (l.tensor_len() * dtype.size()) as u64))
            .sum();
        per_timestep * self.timesteps.len() as u64
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<(), StackError> {
        let invalid = |msg: String| Err(StackError::InvalidManifest(msg));
        if self.version != MANIFEST_VERSION {
            return invalid(format!("unsupported manifest version {}", self.version));
        }
        if self.n_images == 0 {
            return invalid("n_images must be >= 1".into());
        }
        if self.n_images > 256 {
            return invalid(format!("at most 256 images supported, got {}", self.n_images));
        }
        if self.images.len() != self.n_images {
            return invalid(format!(
                "images lists {} files for n_images = {}",
                self.images.len(),
                self.n_images
            ));
        }
        if !self.prompts.is_empty() && self.prompts.len() != self.n_images {
            return invalid("prompts must be empty or have one entry per image".into());
        }
        if !self.seeds.is_empty() && self.seeds.len() != self.n_images {
            return invalid("seeds must be empty or have one entry per image".into());
        }
        if self.width == 0 || self.height == 0 {
            return invalid("width and height must be >= 1".into());
        }
        if self.layers.is_empty() {
            return invalid("at least one layer is required".into());
        }
        let mut seen = HashSet::new();
        for layer in &self.layers {
            if layer.layer_id.is_empty() || layer.layer_id.contains('/') {
                return invalid(format!("bad layer id {:?}", layer.layer_id));
            }
            if !seen.insert(layer.layer_id.as_str()) {
                return invalid(format!("duplicate layer id {:?}", layer.layer_id));
            }
            if layer.heads == 0 || layer.dim == 0 || layer.feat_width == 0 || layer.feat_height == 0
            {
                return invalid(format!("layer {:?} has a zero dimension", layer.layer_id));
            }
            if !self.width.is_multiple_of(layer.feat_width) || !self.height.is_multiple_of(layer.feat_height) {
                return Err(StackError::LayerNotDivisible {
                    layer: layer.layer_id.clone(),
                    feat: (layer.feat_width, layer.feat_height),
                    image: (self.width, self.height),
                });
            }
        }
        if self.timesteps.is_empty() {
            return invalid("at least one timestep is required".into());
        }
        let unique: HashSet<_> = self.timesteps.iter().collect();
        if unique.len() != self.timesteps.len() {
            return invalid("duplicate timestep".into());
        }
        Ok(())
    }
}
