//! Whole-image prediction, optionally through overlapping patches.

use crate::data::{extract_patches, stitch_patches, GrayImage, PatchSettings};
use crate::error::Result;
use crate::network::{Network, PredictMode};
use crate::tensor::Tensor;
use crate::trainer::foreground;

/// Patches forwarded together.
const PATCH_BATCH: usize = 8;

fn predict_batch(net: &Network, images: &[GrayImage], mode: PredictMode) -> Result<Vec<GrayImage>> {
    let tensors: Vec<Tensor> = images.iter().map(GrayImage::to_tensor).collect();
    let refs: Vec<&Tensor> = tensors.iter().collect();
    let probs = net.predict(&Tensor::stack(&refs)?, mode)?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| GrayImage::new(img.height, img.width, foreground(&probs, i).to_vec()))
        .collect()
}

/// Foreground probability map of `image`. With `patches` the image is cut
/// into windows, each window is predicted, and overlaps are averaged; an
/// image no larger than one window is predicted whole.
pub fn predict_image(
    net: &Network,
    image: &GrayImage,
    mode: PredictMode,
    patches: Option<&PatchSettings>,
) -> Result<GrayImage> {
    let whole = |s: &PatchSettings| image.height <= s.patch_size && image.width <= s.patch_size;
    let Some(settings) = patches.filter(|s| !whole(s)) else {
        return Ok(predict_batch(net, std::slice::from_ref(image), mode)?.remove(0));
    };
    let (grid, windows) = extract_patches(image, settings.patch_size, settings.stride, settings.edge_anchored)?;
    let mut preds = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(PATCH_BATCH) {
        preds.extend(predict_batch(net, chunk, mode)?);
    }
    Ok(stitch_patches(&preds, &grid)?.image)
}
