use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{config_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Bilinear,
}

/// Source coordinate of output index `i` under half-pixel centers.
fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5
}

pub fn resize(img: &GrayImage, out_h: usize, out_w: usize, method: Interpolation) -> Result<GrayImage> {
    if out_h == 0 || out_w == 0 {
        return Err(config_err!("resize target {out_h}x{out_w} must be positive"));
    }
    if (out_h, out_w) == (img.height, img.width) {
        return Ok(img.clone());
    }
    let mut data = Vec::with_capacity(out_h * out_w);
    match method {
        Interpolation::Nearest => {
            let pick =
                |i: usize, src: usize, dst: usize| (((i as f64 + 0.5) * src as f64 / dst as f64) as usize).min(src - 1);
            for y in 0..out_h {
                let sy = pick(y, img.height, out_h);
                for x in 0..out_w {
                    data.push(img.at(sy, pick(x, img.width, out_w)));
                }
            }
        }
        Interpolation::Bilinear => {
            let taps = |i: usize, src: usize, dst: usize| {
                let s = source_coord(i, src, dst).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            };
            let cols: Vec<_> = (0..out_w).map(|x| taps(x, img.width, out_w)).collect();
            for y in 0..out_h {
                let (y0, y1, fy) = taps(y, img.height, out_h);
                for &(x0, x1, fx) in &cols {
                    let top = img.at(y0, x0) * (1.0 - fx) + img.at(y0, x1) * fx;
                    let bottom = img.at(y1, x0) * (1.0 - fx) + img.at(y1, x1) * fx;
                    data.push(top * (1.0 - fy) + bottom * fy);
                }
            }
        }
    }
    GrayImage::new(out_h, out_w, data)
}
