use image::RgbImage;

use crate::graph_cut::LabelMap;

use super::CompositeError;

/// Hard composite: every pixel copied from the image its label names.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelComposite {
    pub image: RgbImage,
    /// Label per pixel, row-major, `width * height`.
    pub fullres_labels: Vec<u16>,
}

impl PixelComposite {
    pub fn width(&self) -> usize {
        self.image.width() as usize
    }

    pub fn height(&self) -> usize {
        self.image.height() as usize
    }
}

pub fn pixel_composite(images: &[RgbImage], labels: &LabelMap) -> Result<PixelComposite, CompositeError> {
    let first = images.first().ok_or(CompositeError::EmptyStack)?;
    let (w, h) = (first.width() as usize, first.height() as usize);
    if images
        .iter()
        .any(|im| (im.width() as usize, im.height() as usize) != (w, h))
    {
        return Err(CompositeError::ImageSizeMismatch);
    }
    if let Some(&bad) = labels.labels.iter().find(|&&l| l as usize >= images.len()) {
        return Err(CompositeError::LabelOutOfRange {
            label: bad,
            n_images: images.len(),
        });
    }
    let fullres_labels = labels.resize_nearest(w, h);
    let image = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let l = fullres_labels[y as usize * w + x as usize] as usize;
        *images[l].get_pixel(x, y)
    });
    Ok(PixelComposite {
        image,
        fullres_labels,
    })
}
