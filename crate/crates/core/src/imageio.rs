//! PNG encoding for previews and indexed label maps.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ImageEncoder, RgbImage};
use thiserror::Error;

use crate::graph_cut::LabelMap;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("png encode failed: {0}")]
    Encode(String),
    #[error("png decode failed: {0}")]
    Decode(String),
    #[error("label png must be 8-bit indexed or grayscale, found {0}")]
    NotIndexed(String),
    #[error("label maps hold at most 256 labels, got {0}")]
    TooManyLabels(usize),
}

fn io_err(path: &Path, source: std::io::Error) -> ImageIoError {
    ImageIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Deterministic RGB PNG encoding.
pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>, ImageIoError> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| ImageIoError::Encode(e.to_string()))?;
    Ok(out)
}

pub fn write_rgb_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<(), ImageIoError> {
    let path = path.as_ref();
    fs::write(path, encode_rgb_png(img)?).map_err(|e| io_err(path, e))
}

pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<RgbImage, ImageIoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    image::load_from_memory(&bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| ImageIoError::Decode(format!("{}: {e}", path.display())))
}

/// Colour for label `index`: a few hand-picked hues, then golden-angle steps.
pub fn palette_color(index: usize) -> [u8; 3] {
    const FIXED: [[u8; 3]; 8] = [
        [230, 25, 75],
        [60, 180, 75],
        [0, 130, 200],
        [255, 225, 25],
        [145, 30, 180],
        [245, 130, 48],
        [70, 240, 240],
        [240, 50, 230],
    ];
    if let Some(c) = FIXED.get(index) {
        return *c;
    }
    let hue = (index as f64 * 137.507_764) % 360.0;
    let (s, v) = (0.75, 0.9);
    let c = v * s;
    let x = c * (1.0 - ((hue / 60.0) % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (hue / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let to8 = |v: f64| ((v + m) * 255.0).round() as u8;
    [to8(r), to8(g), to8(b)]
}

/// Indexed PNG at label-grid resolution; pixel value = image index.
pub fn encode_label_png(labels: &LabelMap, n_labels: usize) -> Result<Vec<u8>, ImageIoError> {
    if n_labels == 0 || n_labels > 256 {
        return Err(ImageIoError::TooManyLabels(n_labels));
    }
    let palette: Vec<u8> = (0..n_labels).flat_map(palette_color).collect();
    let data: Vec<u8> = labels.labels.iter().map(|&l| l as u8).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(Cursor::new(&mut out), labels.width as u32, labels.height as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(palette);
        let mut writer = enc
            .write_header()
            .map_err(|e| ImageIoError::Encode(e.to_string()))?;
        writer
            .write_image_data(&data)
            .map_err(|e| ImageIoError::Encode(e.to_string()))?;
        writer
            .finish()
            .map_err(|e| ImageIoError::Encode(e.to_string()))?;
    }
    Ok(out)
}

pub fn write_label_png(
    path: impl AsRef<Path>,
    labels: &LabelMap,
    n_labels: usize,
) -> Result<(), ImageIoError> {
    let path = path.as_ref();
    fs::write(path, encode_label_png(labels, n_labels)?).map_err(|e| io_err(path, e))
}

/// Decodes an indexed (or 8-bit grayscale) label PNG into raw indices.
pub fn decode_label_png(bytes: &[u8]) -> Result<LabelMap, ImageIoError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| ImageIoError::Decode(e.to_string()))?;
    let mut buf = vec![
        0;
        reader
            .output_buffer_size()
            .ok_or_else(|| ImageIoError::Decode("image too large".into()))?
    ];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ImageIoError::Decode(e.to_string()))?;
    match (info.color_type, info.bit_depth) {
        (png::ColorType::Indexed | png::ColorType::Grayscale, png::BitDepth::Eight) => {}
        (ct, bd) => return Err(ImageIoError::NotIndexed(format!("{ct:?} {bd:?}"))),
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut labels = Vec::with_capacity(w * h);
    for row in buf[..info.buffer_size()].chunks_exact(info.line_size) {
        labels.extend(row[..w].iter().map(|&v| v as u16));
    }
    Ok(LabelMap {
        width: w,
        height: h,
        labels,
        energy: 0.0,
    })
}

pub fn read_label_png(path: impl AsRef<Path>) -> Result<LabelMap, ImageIoError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_label_png(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_png_roundtrip() {
        let map = LabelMap {
            width: 5,
            height: 3,
            labels: (0..15).map(|i| (i % 4) as u16).collect(),
            energy: 1.0,
        };
        let bytes = encode_label_png(&map, 4).unwrap();
        let back = decode_label_png(&bytes).unwrap();
        assert_eq!(back.labels, map.labels);
        assert_eq!((back.width, back.height), (5, 3));
        // Same input, same bytes.
        assert_eq!(bytes, encode_label_png(&map, 4).unwrap());
    }

    #[test]
    fn palette_is_distinct_for_small_stacks() {
        let colors: std::collections::HashSet<_> = (0..32).map(palette_color).collect();
        assert_eq!(colors.len(), 32);
    }

    #[test]
    fn too_many_labels() {
        let map = LabelMap::constant(1, 1, 0);
        assert!(encode_label_png(&map, 300).is_err());
    }
}
