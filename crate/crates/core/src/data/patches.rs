//! Sliding-window decomposition and overlap-averaged reconstruction.

use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{config_err, shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSettings {
    pub patch_size: usize,
    pub stride: usize,
    pub edge_anchored: bool,
}

impl Default for PatchSettings {
    fn default() -> Self {
        PatchSettings {
            patch_size: 96,
            stride: 48,
            edge_anchored: true,
        }
    }
}

/// Anchor positions along one axis: `0, stride, 2*stride, ...` while the
/// patch fits, plus `dim - size` when `edge` is set and the regular anchors
/// leave a gap at the end.
pub fn axis_anchors(dim: usize, size: usize, stride: usize, edge: bool) -> Vec<usize> {
    if size == 0 || stride == 0 || size > dim {
        return Vec::new();
    }
    let mut a: Vec<usize> = (0..=dim - size).step_by(stride).collect();
    if edge && a.last().is_some_and(|&l| l + size < dim) {
        a.push(dim - size);
    }
    a
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub stride: usize,
    /// `(row, col)` of each patch's top-left corner, row-major.
    pub anchors: Vec<(usize, usize)>,
    pub source_shape: (usize, usize),
    pub edge_anchored: bool,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch_size: usize, stride: usize, edge_anchored: bool) -> Result<Self> {
        if patch_size == 0 || stride == 0 {
            return Err(config_err!("patch size and stride must be positive"));
        }
        if patch_size > height || patch_size > width {
            return Err(shape_err!("patch size {patch_size} exceeds {height}x{width} image"));
        }
        let rows = axis_anchors(height, patch_size, stride, edge_anchored);
        let cols = axis_anchors(width, patch_size, stride, edge_anchored);
        let anchors = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
        Ok(PatchGrid {
            patch_size,
            stride,
            anchors,
            source_shape: (height, width),
            edge_anchored,
        })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

pub fn extract_patches(
    img: &GrayImage,
    patch_size: usize,
    stride: usize,
    edge_anchored: bool,
) -> Result<(PatchGrid, Vec<GrayImage>)> {
    let grid = PatchGrid::new(img.height, img.width, patch_size, stride, edge_anchored)?;
    let patches = grid
        .anchors
        .iter()
        .map(|&(r, c)| img.crop(r, c, patch_size, patch_size))
        .collect::<Result<_>>()?;
    Ok((grid, patches))
}

/// A reconstructed image and which of its pixels any patch covered.
#[derive(Clone, Debug, PartialEq)]
pub struct Stitched {
    pub image: GrayImage,
    pub covered: Vec<bool>,
}

/// Averages overlapping patch predictions back into a full image; pixels no
/// patch covers are 0 and marked uncovered.
pub fn stitch_patches(preds: &[GrayImage], grid: &PatchGrid) -> Result<Stitched> {
    if preds.len() != grid.anchors.len() {
        return Err(shape_err!(
            "{} patch predictions for {} anchors",
            preds.len(),
            grid.anchors.len()
        ));
    }
    let (h, w) = grid.source_shape;
    let k = grid.patch_size;
    let mut sum = vec![0.0; h * w];
    let mut count = vec![0u32; h * w];
    for (p, &(r, c)) in preds.iter().zip(&grid.anchors) {
        if (p.height, p.width) != (k, k) {
            return Err(shape_err!(
                "patch prediction is {}x{}, grid patches are {k}x{k}",
                p.height,
                p.width
            ));
        }
        for y in 0..k {
            let dst = (r + y) * w + c;
            for x in 0..k {
                sum[dst + x] += p.data[y * k + x];
                count[dst + x] += 1;
            }
        }
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(&s, &n)| if n == 0 { 0.0 } else { s / f64::from(n) })
        .collect();
    Ok(Stitched {
        image: GrayImage::new(h, w, data)?,
        covered: count.iter().map(|&n| n > 0).collect(),
    })
}
