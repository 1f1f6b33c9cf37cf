use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;

use super::blob::{read_blob, read_blob_header, TensorBlob, TensorError};
use super::manifest::{LayerRecord, StackManifest, TensorKey, Which};
use super::StackError;

/// A validated stack: decoded images plus lazily read feature tensors.
///
/// Immutable once loaded, so it can be shared between threads freely.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    root: PathBuf,
    manifest: StackManifest,
    images: Vec<RgbImage>,
}

pub fn load_stack(manifest_path: impl AsRef<Path>) -> Result<FeatureStack, StackError> {
    let manifest_path = manifest_path.as_ref();
    let text = fs::read_to_string(manifest_path).map_err(|source| StackError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let manifest: StackManifest = serde_json::from_str(&text)?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    FeatureStack::from_manifest(root, manifest)
}

impl FeatureStack {
    /// Validates every manifest invariant eagerly: structure, tensor presence
    /// and shape (header only), and image dimensions.
    pub fn from_manifest(root: PathBuf, manifest: StackManifest) -> Result<Self, StackError> {
        manifest.validate()?;

        let keys: Vec<TensorKey> = manifest.all_keys().collect();
        keys.par_iter().try_for_each(|key| {
            let layer = manifest
                .layer(&key.layer)
                .expect("keys are generated from manifest layers");
            let rel = manifest
                .tensor_path(key)
                .ok_or_else(|| StackError::missing(key))?;
            let path = root.join(rel);
            let header = match read_blob_header(&path) {
                Ok(h) => h,
                Err(TensorError::Io { source, .. })
                    if source.kind() == std::io::ErrorKind::NotFound =>
                {
                    return Err(StackError::missing(key));
                }
                Err(source) => {
                    return Err(StackError::Tensor {
                        key: key.to_string(),
                        source,
                    })
                }
            };
            let expected = layer.tensor_shape().to_vec();
            if header.shape != expected {
                return Err(StackError::ShapeMismatch {
                    key: key.to_string(),
                    expected,
                    actual: header.shape,
                });
            }
            Ok(())
        })?;

        let images = manifest
            .images
            .par_iter()
            .enumerate()
            .map(|(index, rel)| {
                let path = root.join(rel);
                let img = image::open(&path)
                    .map_err(|e| StackError::BadImage {
                        index,
                        message: format!("{}: {e}", path.display()),
                    })?
                    .to_rgb8();
                let actual = (img.width() as usize, img.height() as usize);
                if actual != (manifest.width, manifest.height) {
                    return Err(StackError::ImageSizeMismatch {
                        index,
                        expected: (manifest.width, manifest.height),
                        actual,
                    });
                }
                Ok(img)
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(FeatureStack {
            root,
            manifest,
            images,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &StackManifest {
        &self.manifest
    }

    pub fn n_images(&self) -> usize {
        self.manifest.n_images
    }

    /// (width, height) in pixels.
    pub fn size(&self) -> (usize, usize) {
        (self.manifest.width, self.manifest.height)
    }

    pub fn images(&self) -> &[RgbImage] {
        &self.images
    }

    pub fn image(&self, index: usize) -> &RgbImage {
        &self.images[index]
    }

    pub fn layer(&self, layer_id: &str) -> Result<&LayerRecord, StackError> {
        self.manifest
            .layer(layer_id)
            .ok_or_else(|| StackError::UnknownLayer(layer_id.to_string()))
    }

    pub fn tensor_file(&self, key: &TensorKey) -> Result<PathBuf, StackError> {
        self.manifest
            .tensor_path(key)
            .map(|rel| self.root.join(rel))
            .ok_or_else(|| StackError::missing(key))
    }

    pub fn tensor(&self, key: &TensorKey) -> Result<TensorBlob, StackError> {
        let path = self.tensor_file(key)?;
        read_blob(&path).map_err(|source| match source {
            TensorError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                StackError::missing(key)
            }
            source => StackError::Tensor {
                key: key.to_string(),
                source,
            },
        })
    }

    /// Loads one tensor as f32 in (heads, height, width, dim) order.
    pub fn tensor_f32(
        &self,
        image: usize,
        layer: &str,
        timestep: u32,
        which: Which,
    ) -> Result<Vec<f32>, StackError> {
        let key = TensorKey::new(image, layer, timestep, which);
        let record = self.layer(layer)?;
        let blob = self.tensor(&key)?;
        let expected = record.tensor_shape().to_vec();
        if blob.shape() != expected.as_slice() {
            return Err(StackError::ShapeMismatch {
                key: key.to_string(),
                expected,
                actual: blob.shape().to_vec(),
            });
        }
        Ok(blob.into_f32())
    }
}
