//! Binary PGM/PPM codec, vertical centre crop, and bilinear resizing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Interleaved 8-bit pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if !matches!(channels, 1 | 3) || width == 0 || height == 0 {
            return Err(Error::shape(format!(
                "unsupported image geometry {width}×{height}×{channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::shape("pixel buffer does not match geometry"));
        }
        Ok(RawImage {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// P5 for one channel, P6 for three; maxval 255.
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn parse_pnm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated header".into());
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII header")?);
        }
        let channels = match fields[0] {
            "P5" => 1,
            "P6" => 3,
            other => return Err(format!("unsupported magic `{other}` (expected P5 or P6)")),
        };
        let num = |s: &str, what: &str| -> std::result::Result<usize, String> {
            s.parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| format!("invalid {what} `{s}`"))
        };
        let width = num(fields[1], "width")?;
        let height = num(fields[2], "height")?;
        let maxval = num(fields[3], "maxval")?;
        if maxval != 255 {
            return Err(format!("unsupported maxval {maxval} (only 255)"));
        }
        // Exactly one whitespace byte separates the header from the raster.
        if pos >= bytes.len() {
            return Err("missing raster".into());
        }
        pos += 1;
        let expected = width * height * channels;
        let raster = &bytes[pos..];
        if raster.len() < expected {
            return Err(format!("raster has {} bytes, expected {expected}", raster.len()));
        }
        Ok(RawImage {
            width,
            height,
            channels,
            pixels: raster[..expected].to_vec(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse_pnm(&bytes).map_err(|reason| Error::Decode {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pnm()).map_err(|e| Error::io(path, e))
    }

    /// Keeps the central `frac` of the rows at full width.
    pub fn center_crop_rows(&self, frac: f64) -> Result<Self> {
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(Error::config(format!(
                "centre crop fraction must lie in (0, 1], got {frac}"
            )));
        }
        let keep = ((self.height as f64 * frac).round() as usize).clamp(1, self.height);
        if keep == self.height {
            return Ok(self.clone());
        }
        let top = (self.height - keep) / 2;
        let row = self.width * self.channels;
        Ok(RawImage {
            width: self.width,
            height: keep,
            channels: self.channels,
            pixels: self.pixels[top * row..(top + keep) * row].to_vec(),
        })
    }
}

fn source_coord(dst: usize, scale: f64, extent: usize) -> (usize, usize, f64) {
    let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (extent - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(extent - 1);
    (lo, hi, s - lo as f64)
}

/// Bilinear resize with half-pixel centres to a channel-major `C×H×W`
/// tensor scaled to `[0, 1]`.
pub fn resize_bilinear<T: Scalar>(img: &RawImage, height: usize, width: usize) -> Result<Tensor<T>> {
    if height == 0 || width == 0 {
        return Err(Error::shape("resize target must be non-empty"));
    }
    let sy = img.height as f64 / height as f64;
    let sx = img.width as f64 / width as f64;
    let cols: Vec<(usize, usize, f64)> = (0..width).map(|x| source_coord(x, sx, img.width)).collect();
    let mut data = Vec::with_capacity(img.channels * height * width);
    for c in 0..img.channels {
        for y in 0..height {
            let (y0, y1, fy) = source_coord(y, sy, img.height);
            for &(x0, x1, fx) in &cols {
                let p = |yy, xx| img.get(yy, xx, c) as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push(T::of(v / 255.0));
            }
        }
    }
    Tensor::new(&[img.channels, height, width], data)
}

/// Decode, optionally crop the central rows, resize, and scale to `[0, 1]`.
pub fn decode_image<T: Scalar>(
    path: &Path,
    height: usize,
    width: usize,
    center_crop_frac: f64,
) -> Result<Tensor<T>> {
    let raw = RawImage::read(path)?;
    resize_bilinear(&raw.center_crop_rows(center_crop_frac)?, height, width)
}

/// Left and right halves of a `C×H×W` image; the left gets `floor(W/2)`
/// columns.
pub fn split_vertical<T: Scalar>(image: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let [c, h, w] = image.shape()[..] else {
        return Err(Error::shape(format!("expected C×H×W, got {:?}", image.shape())));
    };
    if w < 2 {
        return Err(Error::shape("image too narrow to split"));
    }
    let left_w = w / 2;
    let mut left = Vec::with_capacity(c * h * left_w);
    let mut right = Vec::with_capacity(c * h * (w - left_w));
    for row in image.data().chunks(w) {
        left.extend_from_slice(&row[..left_w]);
        right.extend_from_slice(&row[left_w..]);
    }
    Ok((
        Tensor::new(&[c, h, left_w], left)?,
        Tensor::new(&[c, h, w - left_w], right)?,
    ))
}
