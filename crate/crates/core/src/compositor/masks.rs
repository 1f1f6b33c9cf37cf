use crate::graph_cut::LabelMap;
use crate::tensor_store::StackManifest;

use super::CompositeError;

/// The label map resampled to one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMask {
    pub layer_id: String,
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u16>,
}

impl LayerMask {
    /// Binary mask of image `index` at this layer, row-major.
    pub fn mask(&self, index: usize) -> Vec<u8> {
        self.labels
            .iter()
            .map(|&l| u8::from(l as usize == index))
            .collect()
    }
}

/// Per-layer one-hot masks; every cell belongs to exactly one image.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPyramid {
    pub n_images: usize,
    pub layers: Vec<LayerMask>,
}

impl MaskPyramid {
    pub fn layer(&self, layer_id: &str) -> Result<&LayerMask, CompositeError> {
        self.layers
            .iter()
            .find(|l| l.layer_id == layer_id)
            .ok_or_else(|| CompositeError::UnknownLayer(layer_id.to_string()))
    }

    /// All N masks of a layer, image-major.
    pub fn one_hot(&self, layer_id: &str) -> Result<Vec<Vec<u8>>, CompositeError> {
        let layer = self.layer(layer_id)?;
        Ok((0..self.n_images).map(|i| layer.mask(i)).collect())
    }
}

/// Resamples the label map to every layer of the manifest (nearest neighbour).
pub fn build_masks(labels: &LabelMap, manifest: &StackManifest) -> Result<MaskPyramid, CompositeError> {
    if let Some(seg) = manifest.segmentation_layer() {
        if (seg.feat_width, seg.feat_height) != (labels.width, labels.height) {
            return Err(CompositeError::LabelGridMismatch {
                expected: (seg.feat_width, seg.feat_height),
                actual: (labels.width, labels.height),
            });
        }
    }
    if let Some(&bad) = labels.labels.iter().find(|&&l| l as usize >= manifest.n_images) {
        return Err(CompositeError::LabelOutOfRange {
            label: bad,
            n_images: manifest.n_images,
        });
    }
    let layers = manifest
        .layers
        .iter()
        .map(|l| LayerMask {
            layer_id: l.layer_id.clone(),
            width: l.feat_width,
            height: l.feat_height,
            labels: labels.resize_nearest(l.feat_width, l.feat_height),
        })
        .collect();
    Ok(MaskPyramid {
        n_images: manifest.n_images,
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::test_manifest;

    #[test]
    fn constant_map_gives_constant_masks() {
        let manifest = test_manifest(3, 64, 64, &[(8, 8), (4, 4), (16, 16)]);
        let labels = LabelMap::constant(8, 8, 2);
        let pyramid = build_masks(&labels, &manifest).unwrap();
        for layer in &pyramid.layers {
            assert!(layer.mask(2).iter().all(|&m| m == 1));
            assert!(layer.mask(0).iter().all(|&m| m == 0));
        }
    }

    #[test]
    fn checkerboard_upsamples_to_blocks() {
        let manifest = test_manifest(2, 16, 16, &[(2, 2), (4, 4)]);
        let labels = LabelMap {
            width: 2,
            height: 2,
            labels: vec![0, 1, 1, 0],
            energy: 0.0,
        };
        let pyramid = build_masks(&labels, &manifest).unwrap();
        let m1 = pyramid.layer("layer1").unwrap().mask(1);
        assert_eq!(
            m1,
            vec![0, 0, 1, 1, 0, 0, 1, 1, 1, 1, 0, 0, 1, 1, 0, 0]
        );
    }

    #[test]
    fn rejects_mismatched_grid() {
        let manifest = test_manifest(2, 16, 16, &[(2, 2)]);
        let labels = LabelMap::constant(4, 4, 0);
        assert!(matches!(
            build_masks(&labels, &manifest),
            Err(CompositeError::LabelGridMismatch { .. })
        ));
    }
}
