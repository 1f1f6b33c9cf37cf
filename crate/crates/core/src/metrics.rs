//! Seam and fidelity measures for blended composites.
//!
//! * Seam gradient (SG): mean Sobel magnitude of the luma over seam pixels,
//!   compared against the same measure on every stack image.
//! * PSNR against the hard pixel composite.
//! * Masked SSIM: each region compared with its own source image, with the
//!   SSIM windows restricted to that region.

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compositor::{pixel_composite, CompositeError};
use crate::graph_cut::LabelMap;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Composite(#[from] CompositeError),
}

/// Pixels with at least one 4-neighbour carrying a different label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeamSet {
    pub width: usize,
    pub height: usize,
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
}

impl SeamSet {
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }
}

pub fn seam_pixels(fullres_labels: &[u16], width: usize, height: usize) -> SeamSet {
    assert_eq!(fullres_labels.len(), width * height);
    let mut pixels = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let l = fullres_labels[p];
            let differs = (x > 0 && fullres_labels[p - 1] != l)
                || (x + 1 < width && fullres_labels[p + 1] != l)
                || (y > 0 && fullres_labels[p - width] != l)
                || (y + 1 < height && fullres_labels[p + width] != l);
            if differs {
                pixels.push(p);
            }
        }
    }
    SeamSet {
        width,
        height,
        pixels,
    }
}

/// Rec.601 luma on [0, 1].
pub fn luma(image: &RgbImage) -> Vec<f64> {
    image
        .pixels()
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
        .collect()
}

/// Sobel gradient magnitude at (x, y) with replicated borders.
///
/// The kernels are scaled by 1/4 so a unit step edge reads as magnitude 1.
pub fn sobel_magnitude(plane: &[f64], width: usize, height: usize, x: usize, y: usize) -> f64 {
    let at = |dx: isize, dy: isize| {
        let xx = (x as isize + dx).clamp(0, width as isize - 1) as usize;
        let yy = (y as isize + dy).clamp(0, height as isize - 1) as usize;
        plane[yy * width + xx]
    };
    let gx = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
    let gy = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
    (gx * gx + gy * gy).sqrt() / 4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgScore {
    pub value: f64,
    /// True when the seam set was empty and `value` is a placeholder zero.
    pub empty: bool,
}

pub fn sg_score(image: &RgbImage, seams: &SeamSet) -> Result<SgScore, MetricsError> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if (w, h) != (seams.width, seams.height) {
        return Err(MetricsError::ShapeMismatch(format!(
            "image {w}x{h} vs seam set {}x{}",
            seams.width, seams.height
        )));
    }
    if seams.is_empty() {
        return Ok(SgScore {
            value: 0.0,
            empty: true,
        });
    }
    let plane = luma(image);
    let total: f64 = seams
        .pixels
        .iter()
        .map(|&p| sobel_magnitude(&plane, w, h, p % w, p / w))
        .sum();
    Ok(SgScore {
        value: total / seams.len() as f64,
        empty: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamReport {
    pub sg_score: f64,
    pub stack_min: f64,
    pub stack_avg: f64,
    pub stack_max: f64,
    /// SG of each stack image over the composite's seam set.
    pub per_image: Vec<f64>,
    pub seam_pixels: usize,
    pub empty: bool,
}

impl SeamReport {
    pub fn within_stack_range(&self) -> bool {
        self.stack_min <= self.sg_score && self.sg_score <= self.stack_max
    }
}

pub fn seam_report(
    blended: &RgbImage,
    stack: &[RgbImage],
    fullres_labels: &[u16],
) -> Result<SeamReport, MetricsError> {
    let (w, h) = (blended.width() as usize, blended.height() as usize);
    if fullres_labels.len() != w * h {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} labels for a {w}x{h} image",
            fullres_labels.len()
        )));
    }
    let seams = seam_pixels(fullres_labels, w, h);
    let score = sg_score(blended, &seams)?;
    let per_image = stack
        .iter()
        .map(|img| sg_score(img, &seams).map(|s| s.value))
        .collect::<Result<Vec<_>, _>>()?;
    let stack_min = per_image.iter().copied().fold(f64::INFINITY, f64::min);
    let stack_max = per_image.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let stack_avg = per_image.iter().sum::<f64>() / per_image.len().max(1) as f64;
    Ok(SeamReport {
        sg_score: score.value,
        stack_min,
        stack_avg,
        stack_max,
        per_image,
        seam_pixels: seams.len(),
        empty: score.empty,
    })
}

fn check_same(a: &RgbImage, b: &RgbImage) -> Result<(), MetricsError> {
    if a.dimensions() != b.dimensions() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    Ok(())
}

/// PSNR in dB over all channels, 8-bit peak; `f64::INFINITY` for identical images.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64, MetricsError> {
    check_same(a, b)?;
    let n = a.as_raw().len();
    let sse: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse as f64 / n as f64;
    Ok(20.0 * (255.0 / mse.sqrt()).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DYNAMIC_RANGE: f64 = 255.0;

/// Normalized 1-D Gaussian taps for the SSIM window.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian filter with zero padding.
fn blur(plane: &[f64], width: usize, height: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < width {
                    acc += t * plane[y * width + xx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < height {
                    acc += t * tmp[yy as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// SSIM from windowed first and second moments.
pub fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Per-pixel SSIM of `a` against `b` with windows restricted to `mask`.
/// Entries outside the mask are `None`.
fn masked_ssim_map(
    a: &RgbImage,
    b: &RgbImage,
    mask: &[bool],
    taps: &[f64; SSIM_WINDOW],
) -> Vec<Option<f64>> {
    let (w, h) = (a.width() as usize, a.height() as usize);
    let m: Vec<f64> = mask.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let weight = blur(&m, w, h, taps);
    let mut sum = vec![0.0; w * h];
    for c in 0..3 {
        let x: Vec<f64> = a.pixels().map(|p| p[c] as f64).collect();
        let y: Vec<f64> = b.pixels().map(|p| p[c] as f64).collect();
        let prod = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..w * h).map(|i| m[i] * f(i)).collect() };
        let sx = blur(&prod(&|i| x[i]), w, h, taps);
        let sy = blur(&prod(&|i| y[i]), w, h, taps);
        let sxx = blur(&prod(&|i| x[i] * x[i]), w, h, taps);
        let syy = blur(&prod(&|i| y[i] * y[i]), w, h, taps);
        let sxy = blur(&prod(&|i| x[i] * y[i]), w, h, taps);
        for i in 0..w * h {
            if !mask[i] {
                continue;
            }
            let wt = weight[i];
            let (mx, my) = (sx[i] / wt, sy[i] / wt);
            let vx = sxx[i] / wt - mx * mx;
            let vy = syy[i] / wt - my * my;
            let cxy = sxy[i] / wt - mx * my;
            sum[i] += ssim_from_moments(mx, my, vx, vy, cxy);
        }
    }
    mask.iter()
        .zip(sum)
        .map(|(&inside, s)| inside.then_some(s / 3.0))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedSsim {
    /// Area-weighted mean over regions.
    pub value: f64,
    /// Mean SSIM per image region; `None` for images with no pixels.
    pub per_region: Vec<Option<f64>>,
}

/// Masked SSIM of `blended` against the stack, regions given by full-resolution labels.
pub fn masked_ssim(
    blended: &RgbImage,
    stack: &[RgbImage],
    fullres_labels: &[u16],
) -> Result<MaskedSsim, MetricsError> {
    let (w, h) = (blended.width() as usize, blended.height() as usize);
    if fullres_labels.len() != w * h {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} labels for a {w}x{h} image",
            fullres_labels.len()
        )));
    }
    for img in stack {
        check_same(blended, img)?;
    }
    if let Some(&bad) = fullres_labels.iter().find(|&&l| l as usize >= stack.len()) {
        return Err(MetricsError::ShapeMismatch(format!(
            "label {bad} but only {} images",
            stack.len()
        )));
    }
    let taps = gaussian_taps();
    let mut per_region = vec![None; stack.len()];
    let mut total = 0.0;
    let mut area = 0usize;
    for (i, img) in stack.iter().enumerate() {
        let mask: Vec<bool> = fullres_labels.iter().map(|&l| l as usize == i).collect();
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            continue;
        }
        let region_sum: f64 = masked_ssim_map(blended, img, &mask, &taps)
            .into_iter()
            .flatten()
            .sum();
        per_region[i] = Some(region_sum / count as f64);
        total += region_sum;
        area += count;
    }
    Ok(MaskedSsim {
        value: total / area as f64,
        per_region,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sg: SeamReport,
    /// `None` when the images are identical (infinite PSNR).
    pub psnr_db: Option<f64>,
    pub psnr_infinite: bool,
    pub masked_ssim: f64,
    pub masked_ssim_per_region: Vec<Option<f64>>,
}

/// All measures for a blended image given the stack and the grid label map.
pub fn evaluate(
    blended: &RgbImage,
    stack: &[RgbImage],
    labels: &LabelMap,
) -> Result<MetricsReport, MetricsError> {
    let composite = pixel_composite(stack, labels)?;
    check_same(blended, &composite.image)?;
    let sg = seam_report(blended, stack, &composite.fullres_labels)?;
    let p = psnr(blended, &composite.image)?;
    let ssim = masked_ssim(blended, stack, &composite.fullres_labels)?;
    Ok(MetricsReport {
        sg,
        psnr_db: p.is_finite().then_some(p),
        psnr_infinite: p.is_infinite(),
        masked_ssim: ssim.value,
        masked_ssim_per_region: ssim.per_region,
    })
}
