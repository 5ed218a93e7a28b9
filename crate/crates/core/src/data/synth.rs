//! Synthetic segmentation set: bright anti-aliased ellipses on a noisy
//! darker background.

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GrayImage, Sample};
use crate::error::{config_err, Result};

const SUPERSAMPLE: usize = 4;

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    intensity: f64,
}

impl Ellipse {
    fn random<R: Rng + ?Sized>(rng: &mut R, size: f64) -> Self {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        Ellipse {
            cy: rng.random_range(0.2..0.8) * size,
            cx: rng.random_range(0.2..0.8) * size,
            a: rng.random_range(0.1..0.25) * size,
            b: rng.random_range(0.1..0.25) * size,
            cos: theta.cos(),
            sin: theta.sin(),
            intensity: rng.random_range(0.65..0.9),
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    /// Fraction of the pixel's sub-samples inside the ellipse.
    fn coverage(&self, py: usize, px: usize) -> f64 {
        let step = 1.0 / SUPERSAMPLE as f64;
        let mut hits = 0;
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let y = py as f64 + (sy as f64 + 0.5) * step;
                let x = px as f64 + (sx as f64 + 0.5) * step;
                hits += usize::from(self.contains(y, x));
            }
        }
        hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
    }
}

fn one_sample<R: Rng + ?Sized>(rng: &mut R, index: usize, size: usize) -> Sample {
    let count = rng.random_range(1..=3usize);
    let shapes: Vec<Ellipse> = (0..count).map(|_| Ellipse::random(rng, size as f64)).collect();
    let background: f64 = rng.random_range(0.1..0.3);
    let mut image = Vec::with_capacity(size * size);
    let mut mask = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (cy, cx) = (y as f64 + 0.5, x as f64 + 0.5);
            let inside = shapes.iter().any(|e| e.contains(cy, cx));
            let mut v = background;
            for e in &shapes {
                let c = e.coverage(y, x);
                if c > 0.0 {
                    v = v * (1.0 - c) + e.intensity * c;
                }
            }
            v += rng.random_range(-0.05..0.05);
            image.push(v.clamp(0.0, 1.0));
            mask.push(if inside { 1.0 } else { 0.0 });
        }
    }
    Sample {
        id: format!("synth{index:04}"),
        image: GrayImage {
            height: size,
            width: size,
            data: image,
        },
        mask: GrayImage {
            height: size,
            width: size,
            data: mask,
        },
    }
}

/// `count` deterministic samples of `size x size` pixels.
pub fn synth_dataset(seed: u64, count: usize, size: usize) -> Result<Vec<Sample>> {
    if size == 0 || !size.is_multiple_of(16) {
        return Err(config_err!(
            "synthetic image size must be a positive multiple of 16, got {size}"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|i| one_sample(&mut rng, i, size)).collect())
}
