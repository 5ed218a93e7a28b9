//! Grayscale images, samples and the pipeline around them: portable anymap
//! I/O, resizing, sliding-window patches, synthetic data, splits and
//! manifests.

mod manifest;
mod patches;
mod pnm;
mod resize;
mod split;
mod synth;

pub use manifest::{load_samples, read_manifest, write_manifest, ManifestEntry};
pub use patches::{axis_anchors, extract_patches, stitch_patches, PatchGrid, PatchSettings, Stitched};
pub use pnm::{decode_pnm, encode_pgm, load_mask, load_pgm, save_pgm};
pub use resize::{resize, Interpolation};
pub use split::split;
pub use synth::synth_dataset;

use crate::error::{data_err, shape_err, Result};
use crate::tensor::{Shape, Tensor};

/// Row-major single-channel image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                data.len()
            ));
        }
        Ok(GrayImage { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        GrayImage {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<GrayImage> {
        if top + height > self.height || left + width > self.width {
            return Err(shape_err!(
                "crop {height}x{width} at ({top},{left}) exceeds {}x{} image",
                self.height,
                self.width
            ));
        }
        let mut data = Vec::with_capacity(height * width);
        for y in top..top + height {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + left..row + left + width]);
        }
        Ok(GrayImage { height, width, data })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), self.data.clone())
            .unwrap_or_else(|_| unreachable!("image buffer length is checked on construction"))
    }

    /// Mask view: 1 where the value is at least one half.
    pub fn threshold(&self) -> GrayImage {
        GrayImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// An image with its binary ground-truth mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub mask: GrayImage,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: GrayImage, mask: GrayImage) -> Result<Self> {
        let id = id.into();
        if (image.height, image.width) != (mask.height, mask.width) {
            return Err(data_err!(
                "sample {id}: image is {}x{}, mask is {}x{}",
                image.height,
                image.width,
                mask.height,
                mask.width
            ));
        }
        if !mask.is_binary() {
            return Err(data_err!("sample {id}: mask is not binary"));
        }
        Ok(Sample { id, image, mask })
    }

    /// Cuts the sample into aligned image/mask patches, ids suffixed with
    /// the anchor.
    pub fn patches(&self, settings: &PatchSettings) -> Result<Vec<Sample>> {
        let (grid, images) = extract_patches(
            &self.image,
            settings.patch_size,
            settings.stride,
            settings.edge_anchored,
        )?;
        let (_, masks) = extract_patches(&self.mask, settings.patch_size, settings.stride, settings.edge_anchored)?;
        Ok(grid
            .anchors
            .iter()
            .zip(images.into_iter().zip(masks))
            .map(|(&(r, c), (image, mask))| Sample {
                id: format!("{}@{r},{c}", self.id),
                image,
                mask,
            })
            .collect())
    }
}
