//! 8-bit grayscale images and binary PGM (P5) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Data(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// Rows `start..end` as a new image.
    pub fn rows(&self, start: usize, end: usize) -> GrayImage {
        GrayImage {
            width: self.width,
            height: end - start,
            pixels: self.pixels[start * self.width..end * self.width].to_vec(),
        }
    }

    /// Pixels scaled to `[0, 1]` as a `[1, height, width]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[1, self.height, self.width],
            self.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        )
        .expect("image dimensions are positive")
    }

    /// Inverse of [`GrayImage::to_tensor`]: values are clamped to `[0, 1]`
    /// and rounded to 8 bits.
    pub fn from_unit_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = match *t.shape() {
            [1, h, w] | [h, w] => (h, w),
            _ => return Err(Error::Data(format!("cannot export tensor {:?} as an image", t.shape()))),
        };
        let pixels = t
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        GrayImage::new(w, h, pixels)
    }
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(img)).at(path)
}

/// Parse a binary PGM. Comments (`#` to end of line) are allowed between
/// header fields; `maxval` must be at most 255.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
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
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format!("expected magic P5, found {:?}", fields[0]));
    }
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("invalid {what} {s:?}"));
    let width = num(&fields[1], "width")?;
    let height = num(&fields[2], "height")?;
    let maxval = num(&fields[3], "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = width * height;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| {
        format!(
            "raster has {} bytes, expected {need}",
            bytes.len().saturating_sub(pos)
        )
    })?;
    let pixels = if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&p| ((p as usize * 255 + maxval / 2) / maxval).min(255) as u8)
            .collect()
    };
    GrayImage::new(width, height, pixels).map_err(|e| e.to_string())
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).at(path)?;
    decode_pgm(&bytes).map_err(|msg| Error::Data(format!("{}: {msg}", path.display())))
}
