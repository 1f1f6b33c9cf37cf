use crate::tensor_store::{FeatureStack, LayerRecord, TensorBlob, Which};

use super::masks::{LayerMask, MaskPyramid};
use super::CompositeError;

/// Masked mixture of per-image (heads, h, w, dim) tensors.
///
/// Masks are a partition, so the sum over images reduces to copying each
/// cell's vectors from the one image whose mask is set there.
pub fn mix_tensors(
    sources: &[&[f32]],
    mask: &LayerMask,
    heads: usize,
    dim: usize,
) -> Result<Vec<f32>, CompositeError> {
    let cells = mask.width * mask.height;
    let len = heads * cells * dim;
    if let Some(bad) = sources.iter().position(|s| s.len() != len) {
        return Err(CompositeError::ShapeMismatch {
            what: format!("source {bad} for layer {}", mask.layer_id),
            expected: vec![heads, mask.height, mask.width, dim],
            actual: sources[bad].len(),
        });
    }
    let mut out = vec![0f32; len];
    for head in 0..heads {
        for (cell, &label) in mask.labels.iter().enumerate() {
            let src = sources
                .get(label as usize)
                .ok_or(CompositeError::LabelOutOfRange {
                    label,
                    n_images: sources.len(),
                })?;
            let at = (head * cells + cell) * dim;
            out[at..at + dim].copy_from_slice(&src[at..at + dim]);
        }
    }
    Ok(out)
}

fn layer_inputs<'a>(
    stack: &'a FeatureStack,
    masks: &'a MaskPyramid,
    layer: &str,
) -> Result<(&'a LayerRecord, &'a LayerMask), CompositeError> {
    let record = stack.layer(layer)?;
    let mask = masks.layer(layer)?;
    if (mask.width, mask.height) != (record.feat_width, record.feat_height) {
        return Err(CompositeError::LabelGridMismatch {
            expected: (record.feat_width, record.feat_height),
            actual: (mask.width, mask.height),
        });
    }
    Ok((record, mask))
}

fn composite_one(
    stack: &FeatureStack,
    record: &LayerRecord,
    mask: &LayerMask,
    timestep: u32,
    which: Which,
) -> Result<TensorBlob, CompositeError> {
    let tensors = (0..stack.n_images())
        .map(|i| stack.tensor_f32(i, &record.layer_id, timestep, which))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&[f32]> = tensors.iter().map(Vec::as_slice).collect();
    let mixed = mix_tensors(&refs, mask, record.heads, record.dim)?;
    Ok(TensorBlob::from_f32(record.tensor_shape().to_vec(), mixed)?)
}

/// Composite key and value tensors of one layer and timestep.
pub fn composite_kv(
    stack: &FeatureStack,
    masks: &MaskPyramid,
    layer: &str,
    timestep: u32,
) -> Result<(TensorBlob, TensorBlob), CompositeError> {
    let (record, mask) = layer_inputs(stack, masks, layer)?;
    let k = composite_one(stack, record, mask, timestep, Which::K)?;
    let v = composite_one(stack, record, mask, timestep, Which::V)?;
    Ok((k, v))
}

/// Composite query: the live `q_model` inside the base image's region, the
/// stored queries of the other images elsewhere.
pub fn composite_q(
    stack: &FeatureStack,
    masks: &MaskPyramid,
    layer: &str,
    timestep: u32,
    base_index: usize,
    q_model: &TensorBlob,
) -> Result<TensorBlob, CompositeError> {
    let (record, mask) = layer_inputs(stack, masks, layer)?;
    let shape = record.tensor_shape().to_vec();
    if q_model.shape() != shape.as_slice() {
        return Err(CompositeError::ShapeMismatch {
            what: format!("q_model for layer {layer}"),
            expected: shape,
            actual: q_model.len(),
        });
    }
    if base_index >= stack.n_images() {
        return Err(CompositeError::BadBase(base_index));
    }
    let live = q_model.to_f32();
    let mut stored: Vec<Option<Vec<f32>>> = vec![None; stack.n_images()];
    for (i, slot) in stored.iter_mut().enumerate() {
        let used = i != base_index && mask.labels.iter().any(|&l| l as usize == i);
        if used {
            *slot = Some(stack.tensor_f32(i, layer, timestep, Which::Q)?);
        }
    }
    let placeholder: &[f32] = &live;
    let refs: Vec<&[f32]> = stored
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if i == base_index {
                live.as_slice()
            } else {
                s.as_deref().unwrap_or(placeholder)
            }
        })
        .collect();
    let mixed = mix_tensors(&refs, mask, record.heads, record.dim)?;
    Ok(TensorBlob::from_f32(shape, mixed)?)
}
