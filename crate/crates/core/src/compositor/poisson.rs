//! Gradient-domain blending of a hard composite, used as a baseline.
//!
//! Pixels outside the base image's region are unknowns. Base pixels are fixed
//! (Dirichlet boundary). The guidance gradient across a 4-neighbour pair comes
//! from the source image of the unknown side; pairs straddling two non-base
//! regions average both sources. The discrete Poisson system is solved per
//! channel with conjugate gradients on the 5-point Laplacian.

use image::RgbImage;

use super::pixels::PixelComposite;
use super::CompositeError;

pub const MAX_ITERATIONS: usize = 10_000;
pub const RELATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct BlendOutcome {
    pub image: RgbImage,
    /// CG iterations per channel.
    pub iterations: [usize; 3],
    /// Final relative residual per channel.
    pub residual: [f64; 3],
    /// Set when the blend could not run and the hard composite was returned.
    pub fallback: Option<String>,
}

/// The linear system for one composite: unknown set, neighbours and guidance.
#[derive(Debug, Clone)]
pub struct PoissonProblem {
    width: usize,
    height: usize,
    /// Unknown index per pixel, or `usize::MAX` for fixed pixels.
    index: Vec<usize>,
    unknowns: Vec<usize>,
    /// Fixed pixel values, per channel, f64.
    values: [Vec<f64>; 3],
    /// Right-hand side per channel.
    rhs: [Vec<f64>; 3],
    /// (pixel, neighbour, guidance per channel) for every pair touching an unknown.
    pairs: Vec<(usize, usize, [f64; 3])>,
}

fn neighbours(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let mut out = [(usize::MAX, usize::MAX); 4];
    if x > 0 {
        out[0] = (x - 1, y);
    }
    if x + 1 < w {
        out[1] = (x + 1, y);
    }
    if y > 0 {
        out[2] = (x, y - 1);
    }
    if y + 1 < h {
        out[3] = (x, y + 1);
    }
    out.into_iter().filter(|&(x, _)| x != usize::MAX)
}

impl PoissonProblem {
    pub fn new(
        composite: &PixelComposite,
        sources: &[RgbImage],
        base_index: usize,
    ) -> Result<Self, CompositeError> {
        let (w, h) = (composite.width(), composite.height());
        if base_index >= sources.len() {
            return Err(CompositeError::BadBase(base_index));
        }
        if sources
            .iter()
            .any(|s| (s.width() as usize, s.height() as usize) != (w, h))
        {
            return Err(CompositeError::ImageSizeMismatch);
        }
        let labels = &composite.fullres_labels;
        let base = base_index as u16;
        if !labels.contains(&base) {
            return Err(CompositeError::NoBoundary);
        }

        let mut index = vec![usize::MAX; w * h];
        let mut unknowns = Vec::new();
        for (p, &l) in labels.iter().enumerate() {
            if l != base {
                index[p] = unknowns.len();
                unknowns.push(p);
            }
        }

        let channel = |img: &RgbImage, p: usize, c: usize| -> f64 {
            img.get_pixel((p % w) as u32, (p / w) as u32)[c] as f64
        };
        let values: [Vec<f64>; 3] =
            std::array::from_fn(|c| (0..w * h).map(|p| channel(&composite.image, p, c)).collect());

        let mut rhs: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; unknowns.len()]);
        let mut pairs = Vec::new();
        for (k, &p) in unknowns.iter().enumerate() {
            let (x, y) = (p % w, p / w);
            let lp = labels[p];
            for (nx, ny) in neighbours(x, y, w, h) {
                let q = ny * w + nx;
                let lq = labels[q];
                let src_p = &sources[lp as usize];
                let guidance: [f64; 3] = std::array::from_fn(|c| {
                    let from_p = channel(src_p, p, c) - channel(src_p, q, c);
                    if lq == lp || lq == base {
                        from_p
                    } else {
                        let src_q = &sources[lq as usize];
                        0.5 * (from_p + channel(src_q, p, c) - channel(src_q, q, c))
                    }
                });
                for c in 0..3 {
                    rhs[c][k] += guidance[c];
                    if lq == base {
                        rhs[c][k] += values[c][q];
                    }
                }
                // Each unknown-unknown pair is recorded once, from its lower index.
                if lq == base || p < q {
                    pairs.push((p, q, guidance));
                }
            }
        }

        Ok(PoissonProblem {
            width: w,
            height: h,
            index,
            unknowns,
            values,
            rhs,
            pairs,
        })
    }

    pub fn unknown_count(&self) -> usize {
        self.unknowns.len()
    }

    fn degree(&self, p: usize) -> f64 {
        neighbours(p % self.width, p / self.width, self.width, self.height).count() as f64
    }

    /// y = A x over the unknowns.
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (k, &p) in self.unknowns.iter().enumerate() {
            let (px, py) = (p % self.width, p / self.width);
            let mut acc = self.degree(p) * x[k];
            for (nx, ny) in neighbours(px, py, self.width, self.height) {
                let j = self.index[ny * self.width + nx];
                if j != usize::MAX {
                    acc -= x[j];
                }
            }
            y[k] = acc;
        }
    }

    fn solve_channel(&self, c: usize) -> (Vec<f64>, usize, f64) {
        let n = self.unknowns.len();
        let b = &self.rhs[c];
        let mut x: Vec<f64> = self.unknowns.iter().map(|&p| self.values[c][p]).collect();
        let mut ax = vec![0.0; n];
        self.apply(&x, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let mut p = r.clone();
        let mut ap = vec![0.0; n];
        let mut iterations = 0;
        while iterations < MAX_ITERATIONS && rr.sqrt() > RELATIVE_TOLERANCE * b_norm {
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rr / pap;
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            for k in 0..n {
                p[k] = r[k] + beta * p[k];
            }
            rr = rr_new;
            iterations += 1;
        }
        (x, iterations, rr.sqrt() / b_norm)
    }

    /// Solves all channels; returns unclamped values per channel over the full image.
    pub fn solve(&self) -> ([Vec<f64>; 3], [usize; 3], [f64; 3]) {
        let mut iterations = [0; 3];
        let mut residual = [0.0; 3];
        let planes = std::array::from_fn(|c| {
            let (x, it, res) = self.solve_channel(c);
            iterations[c] = it;
            residual[c] = res;
            let mut plane = self.values[c].clone();
            for (k, &p) in self.unknowns.iter().enumerate() {
                plane[p] = x[k];
            }
            plane
        });
        (planes, iterations, residual)
    }

    /// Sum of squared differences between the image's gradients and the
    /// guidance field over every pair touching an unknown pixel.
    pub fn gradient_mismatch(&self, image: &RgbImage) -> f64 {
        let w = self.width;
        let value = |p: usize, c: usize| image.get_pixel((p % w) as u32, (p / w) as u32)[c] as f64;
        self.pairs
            .iter()
            .map(|&(p, q, g)| {
                (0..3)
                    .map(|c| {
                        let d = value(p, c) - value(q, c) - g[c];
                        d * d
                    })
                    .sum::<f64>()
            })
            .sum()
    }
}

fn to_image(planes: &[Vec<f64>; 3], width: usize, height: usize) -> RgbImage {
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let p = y as usize * width + x as usize;
        image::Rgb(std::array::from_fn(|c| planes[c][p].round().clamp(0.0, 255.0) as u8))
    })
}

/// Fails with `NoBoundary` when no base pixel exists to anchor the solve.
pub fn try_poisson_blend(
    composite: &PixelComposite,
    sources: &[RgbImage],
    base_index: usize,
) -> Result<BlendOutcome, CompositeError> {
    let problem = PoissonProblem::new(composite, sources, base_index)?;
    if problem.unknown_count() == 0 {
        return Ok(BlendOutcome {
            image: composite.image.clone(),
            iterations: [0; 3],
            residual: [0.0; 3],
            fallback: None,
        });
    }
    let (planes, iterations, residual) = problem.solve();
    if residual.iter().any(|&r| r > RELATIVE_TOLERANCE) {
        log::warn!("poisson solve stopped at relative residual {residual:?}");
    }
    Ok(BlendOutcome {
        image: to_image(&planes, composite.width(), composite.height()),
        iterations,
        residual,
        fallback: None,
    })
}

/// Poisson blend, falling back to the hard composite when it cannot run.
pub fn poisson_blend(
    composite: &PixelComposite,
    sources: &[RgbImage],
    base_index: usize,
) -> Result<BlendOutcome, CompositeError> {
    match try_poisson_blend(composite, sources, base_index) {
        Err(CompositeError::NoBoundary) => {
            let reason = "no base pixels anchor the blend; returning the hard composite";
            log::warn!("{reason}");
            Ok(BlendOutcome {
                image: composite.image.clone(),
                iterations: [0; 3],
                residual: [0.0; 3],
                fallback: Some(reason.to_string()),
            })
        }
        other => other,
    }
}
