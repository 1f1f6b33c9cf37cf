use serde::{Deserialize, Serialize};

use super::GraphCutError;

/// One brush stroke: a polyline in image pixel coordinates bound to a source image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub image_index: usize,
    pub points: Vec<[f64; 2]>,
    pub radius: f64,
}

/// Ordered strokes plus the base image. Later strokes win where they overlap.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StrokeSet {
    pub base_index: usize,
    #[serde(default)]
    pub strokes: Vec<Stroke>,
}

/// A stroke-set violation, with the JSON path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field}: {message}")]
pub struct StrokeError {
    pub field: String,
    pub message: String,
}

impl StrokeError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        StrokeError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl StrokeSet {
    /// An empty stroke list is an explicit all-base request.
    pub fn all_base(base_index: usize) -> Self {
        StrokeSet {
            base_index,
            strokes: Vec::new(),
        }
    }

    pub fn validate(&self, n_images: usize, width: usize, height: usize) -> Result<(), StrokeError> {
        if self.base_index >= n_images {
            return Err(StrokeError::new(
                "base_index",
                format!("{} is not an image index (stack has {n_images})", self.base_index),
            ));
        }
        for (s, stroke) in self.strokes.iter().enumerate() {
            if stroke.image_index >= n_images {
                return Err(StrokeError::new(
                    format!("strokes[{s}].image_index"),
                    format!("{} is not an image index (stack has {n_images})", stroke.image_index),
                ));
            }
            if stroke.radius.is_nan() || stroke.radius < 1.0 || !stroke.radius.is_finite() {
                return Err(StrokeError::new(
                    format!("strokes[{s}].radius"),
                    format!("radius must be a finite number >= 1, got {}", stroke.radius),
                ));
            }
            if stroke.points.is_empty() {
                return Err(StrokeError::new(
                    format!("strokes[{s}].points"),
                    "a stroke needs at least one point",
                ));
            }
            for (k, &[x, y]) in stroke.points.iter().enumerate() {
                let inside = x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64;
                if !inside {
                    return Err(StrokeError::new(
                        format!("strokes[{s}].points[{k}]"),
                        format!("({x}, {y}) lies outside the {width}x{height} image"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-cell stroke designation on the feature grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Designations {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<Option<u16>>,
}

impl Designations {
    pub fn empty(width: usize, height: usize) -> Self {
        Designations {
            width,
            height,
            cells: vec![None; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Option<u16> {
        self.cells[y * self.width + x]
    }

    pub fn designated_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }
}

/// Spacing between disk stamps along a segment, in pixels.
const STAMP_SPACING: f64 = 0.5;

/// Stamps every stroke as disks along its polyline and marks the feature
/// cells whose pixel blocks receive any stamped pixel.
pub fn rasterize_strokes(
    strokes: &StrokeSet,
    image_size: (usize, usize),
    grid_size: (usize, usize),
) -> Result<Designations, GraphCutError> {
    let (width, height) = image_size;
    let (gw, gh) = grid_size;
    if gw == 0 || gh == 0 || width % gw != 0 || height % gh != 0 {
        return Err(GraphCutError::GridNotDivisible {
            image: image_size,
            grid: grid_size,
        });
    }
    let (sx, sy) = (width / gw, height / gh);
    let mut out = Designations::empty(gw, gh);

    for stroke in &strokes.strokes {
        let label = stroke.image_index as u16;
        let mut stamp = |cx: f64, cy: f64| {
            let r = stroke.radius;
            let x0 = (cx - r).ceil().max(0.0) as usize;
            let y0 = (cy - r).ceil().max(0.0) as usize;
            let x1 = ((cx + r).floor() as i64).min(width as i64 - 1);
            let y1 = ((cy + r).floor() as i64).min(height as i64 - 1);
            if x1 < 0 || y1 < 0 {
                return;
            }
            for py in y0..=y1 as usize {
                for px in x0..=x1 as usize {
                    let (dx, dy) = (px as f64 - cx, py as f64 - cy);
                    if dx * dx + dy * dy <= r * r {
                        out.cells[(py / sy) * gw + px / sx] = Some(label);
                    }
                }
            }
        };

        let pts = &stroke.points;
        stamp(pts[0][0], pts[0][1]);
        for seg in pts.windows(2) {
            let ([ax, ay], [bx, by]) = (seg[0], seg[1]);
            let len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
            let steps = (len / STAMP_SPACING).ceil().max(1.0) as usize;
            for s in 1..=steps {
                let t = s as f64 / steps as f64;
                stamp(ax + (bx - ax) * t, ay + (by - ay) * t);
            }
        }
    }
    Ok(out)
}
