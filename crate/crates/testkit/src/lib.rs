//! Slow, direct reference implementations used to check the engine.
//!
//! Nothing here shares code with the implementations under test: the
//! eigensolver is cyclic Jacobi, the image measures are written as the
//! textbook per-pixel loops.

use gpm_core::feature_prep::{FeatureGrids, PcaModel};
use gpm_core::graph_cut::LabelMap;
use image::RgbImage;
use rand::Rng;

/// Cyclic Jacobi eigendecomposition of a symmetric `n x n` row-major matrix.
/// Returns eigenvalues and unit eigenvectors (one `Vec` per eigenvalue),
/// sorted by decreasing eigenvalue.
pub fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    assert_eq!(a.len(), n * n);
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
        .collect();
    (values, vectors)
}

/// Largest-magnitude entry made positive; earliest index wins ties.
pub fn sign_normalized(mut v: Vec<f64>) -> Vec<f64> {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best = i;
            best_abs = x.abs();
        }
    }
    if v[best] < 0.0 {
        for x in &mut v {
            *x = -*x;
        }
    }
    v
}

pub struct OraclePca {
    pub mean: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub variance: Vec<f64>,
}

/// Top-`k` principal axes of the sample rows via an explicit covariance
/// matrix (unbiased) and Jacobi.
pub fn pca_oracle(rows: &[Vec<f64>], k: usize) -> OraclePca {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in 0..d {
                cov[i * d + j] += di * (r[j] - mean[j]);
            }
        }
    }
    for c in &mut cov {
        *c /= (n - 1) as f64;
    }
    let (values, vectors) = jacobi_eigen(cov, d);
    OraclePca {
        mean,
        basis: vectors.into_iter().take(k).map(sign_normalized).collect(),
        variance: values.into_iter().take(k).collect(),
    }
}

/// Random feature grids with a well-separated spectrum: latent scales
/// decaying by 0.75 per axis along random orthonormal directions.
pub fn random_feature_grids(
    rng: &mut impl Rng,
    n_images: usize,
    width: usize,
    height: usize,
    dim: usize,
) -> FeatureGrids {
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while axes.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for a in &axes {
            let dot: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(a).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            axes.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let offset: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
    let images = (0..n_images)
        .map(|_| {
            let mut out = Vec::with_capacity(width * height * dim);
            for _ in 0..width * height {
                let mut x = offset.clone();
                for (j, axis) in axes.iter().enumerate() {
                    let z = rng.random_range(-1.0..1.0) * 10.0 * 0.75f64.powi(j as i32);
                    x.iter_mut().zip(axis).for_each(|(xi, a)| *xi += z * a);
                }
                out.extend(x.into_iter().map(|v| v as f32));
            }
            out
        })
        .collect();
    FeatureGrids {
        width,
        height,
        dim,
        images,
    }
}

/// Rows of all images, widened to f64.
pub fn grid_rows(grids: &FeatureGrids) -> Vec<Vec<f64>> {
    grids
        .images
        .iter()
        .flat_map(|g| g.chunks_exact(grids.dim))
        .map(|r| r.iter().map(|&x| x as f64).collect())
        .collect()
}

/// Largest absolute difference between model and oracle axes, and the
/// largest relative difference in explained variance.
pub fn pca_discrepancy(model: &PcaModel, oracle: &OraclePca) -> (f64, f64) {
    let mut axis_err: f64 = 0.0;
    let mut var_err: f64 = 0.0;
    for k in 0..model.n_components {
        for (a, b) in model.component(k).iter().zip(&oracle.basis[k]) {
            axis_err = axis_err.max((a - b).abs());
        }
        let (v, w) = (model.explained_variance[k], oracle.variance[k]);
        var_err = var_err.max((v - w).abs() / w.abs().max(1e-12));
    }
    (axis_err, var_err)
}

fn naive_luma(img: &RgbImage, x: i64, y: i64) -> f64 {
    let x = x.clamp(0, img.width() as i64 - 1) as u32;
    let y = y.clamp(0, img.height() as i64 - 1) as u32;
    let p = img.get_pixel(x, y);
    (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
}

/// True where a pixel has a 4-neighbour with another label.
pub fn naive_seam_mask(labels: &[u16], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h
                    && labels[ny as usize * w + nx as usize] != l {
                        out[y * w + x] = true;
                    }
            }
        }
    }
    out
}

/// Mean Sobel magnitude (kernels scaled by 1/4) over the seam pixels.
pub fn naive_sg(img: &RgbImage, fullres_labels: &[u16]) -> f64 {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    const KY: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let (w, h) = (img.width() as usize, img.height() as usize);
    let seams = naive_seam_mask(fullres_labels, w, h);
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !seams[y * w + x] {
                continue;
            }
            let (mut gx, mut gy) = (0.0, 0.0);
            for (r, (kx, ky)) in KX.iter().zip(&KY).enumerate() {
                for c in 0..3 {
                    let v = naive_luma(img, x as i64 + c as i64 - 1, y as i64 + r as i64 - 1);
                    gx += kx[c] * v;
                    gy += ky[c] * v;
                }
            }
            total += (gx * gx + gy * gy).sqrt() / 4.0;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

pub fn naive_psnr(a: &RgbImage, b: &RgbImage) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for (p, q) in a.pixels().zip(b.pixels()) {
        for c in 0..3 {
            let d = p[c] as f64 - q[c] as f64;
            sum += d * d;
            n += 1.0;
        }
    }
    let mse = sum / n;
    10.0 * (255.0 * 255.0 / mse).log10()
}

/// Masked SSIM written as explicit window loops: for each pixel of region
/// `i`, an 11x11 Gaussian (sigma 1.5) window restricted to region `i`,
/// compared against stack image `i`; averaged over channels and pixels.
pub fn naive_masked_ssim(blended: &RgbImage, stack: &[RgbImage], fullres_labels: &[u16]) -> f64 {
    let (w, h) = (blended.width() as i64, blended.height() as i64);
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            let region = fullres_labels[(y * w + x) as usize];
            let other = &stack[region as usize];
            let mut per_channel = 0.0;
            for c in 0..3 {
                let (mut sw, mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -5i64..=5 {
                    for dx in -5i64..=5 {
                        let (qx, qy) = (x + dx, y + dy);
                        if qx < 0 || qy < 0 || qx >= w || qy >= h {
                            continue;
                        }
                        if fullres_labels[(qy * w + qx) as usize] != region {
                            continue;
                        }
                        let g = (-((dx * dx + dy * dy) as f64) / (2.0 * 1.5 * 1.5)).exp();
                        let a = blended.get_pixel(qx as u32, qy as u32)[c] as f64;
                        let b = other.get_pixel(qx as u32, qy as u32)[c] as f64;
                        sw += g;
                        sa += g * a;
                        sb += g * b;
                        saa += g * a * a;
                        sbb += g * b * b;
                        sab += g * a * b;
                    }
                }
                let (ma, mb) = (sa / sw, sb / sw);
                let va = saa / sw - ma * ma;
                let vb = sbb / sw - mb * mb;
                let cab = sab / sw - ma * mb;
                per_channel += ((2.0 * ma * mb + c1) * (2.0 * cab + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
            total += per_channel / 3.0;
            count += 1;
        }
    }
    total / count as f64
}

/// Composite tensor as the literal masked sum `sum_i M_i * X_i` over
/// (heads, h, w, dim) sources with per-cell labels.
pub fn masked_sum_oracle(sources: &[Vec<f32>], labels: &[u16], heads: usize, dim: usize) -> Vec<f32> {
    let cells = labels.len();
    let mut out = vec![0f32; heads * cells * dim];
    for (i, src) in sources.iter().enumerate() {
        for head in 0..heads {
            for (cell, &l) in labels.iter().enumerate() {
                let m = if l as usize == i { 1.0f32 } else { 0.0 };
                for k in 0..dim {
                    let at = (head * cells + cell) * dim + k;
                    out[at] += m * src[at];
                }
            }
        }
    }
    out
}

/// Random label map: a few axis-aligned rectangles painted over a random base.
pub fn random_label_map(rng: &mut impl Rng, w: usize, h: usize, n: usize) -> LabelMap {
    let mut labels = vec![rng.random_range(0..n) as u16; w * h];
    for _ in 0..rng.random_range(0..6) {
        let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
        let (x1, y1) = (rng.random_range(x0..w) + 1, rng.random_range(y0..h) + 1);
        let l = rng.random_range(0..n) as u16;
        for y in y0..y1 {
            for x in x0..x1 {
                labels[y * w + x] = l;
            }
        }
    }
    LabelMap {
        width: w,
        height: h,
        labels,
        energy: 0.0,
    }
}
