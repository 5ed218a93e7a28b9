//! Netpbm reader (P2/P5 graymaps, P3/P6 pixmaps averaged to gray) and a P5
//! writer.

use std::fs;
use std::path::Path;

use super::GrayImage;
use crate::error::{data_err, Result};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
        {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token().ok_or_else(|| data_err!("header ends before {what}"))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| data_err!("malformed {what} {:?}", String::from_utf8_lossy(tok)))
    }
}

/// Decodes an in-memory P2, P3, P5 or P6 file to gray values in `[0, 1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<GrayImage> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.token().ok_or_else(|| data_err!("empty file"))?;
    let (binary, channels) = match magic {
        b"P2" => (false, 1),
        b"P5" => (true, 1),
        b"P3" => (false, 3),
        b"P6" => (true, 3),
        other => return Err(data_err!("unsupported magic {:?}", String::from_utf8_lossy(other))),
    };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(data_err!("image dimensions {width}x{height} are empty"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(data_err!("maxval {maxval} outside 1..=65535"));
    }
    let count = width * height * channels;
    let mut raw = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the payload
        let start = cur.pos + 1;
        let wide = maxval > 255;
        let need = count * if wide { 2 } else { 1 };
        let payload = bytes.get(start..start + need).ok_or_else(|| {
            data_err!(
                "truncated payload: need {need} bytes, have {}",
                bytes.len().saturating_sub(start)
            )
        })?;
        if wide {
            raw.extend(
                payload
                    .chunks_exact(2)
                    .map(|b| usize::from(u16::from_be_bytes([b[0], b[1]]))),
            );
        } else {
            raw.extend(payload.iter().map(|&b| usize::from(b)));
        }
    } else {
        for i in 0..count {
            let v = cur
                .number("sample")
                .map_err(|_| data_err!("truncated payload: sample {i} of {count} missing or malformed"))?;
            raw.push(v);
        }
    }
    if let Some(v) = raw.iter().find(|&&v| v > maxval) {
        return Err(data_err!("sample value {v} exceeds maxval {maxval}"));
    }
    let scale = maxval as f64;
    let data = raw
        .chunks_exact(channels)
        .map(|px| px.iter().sum::<usize>() as f64 / (channels as f64 * scale))
        .collect();
    GrayImage::new(height, width, data)
}

pub fn load_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| data_err!("cannot read {}: {e}", path.display()))?;
    decode_pnm(&bytes).map_err(|e| data_err!("{}: {e}", path.display()))
}

/// Loads a mask and binarizes it at one half.
pub fn load_mask(path: &Path) -> Result<GrayImage> {
    Ok(load_pgm(path)?.threshold())
}

/// P5 with maxval 255; values are clamped to `[0, 1]` and rounded.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn save_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}
