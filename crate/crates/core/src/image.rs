//! Grayscale raster used by every stage of the pipeline.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 255]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMatrix {
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
}

impl ImageMatrix {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if pixels.len() != rows * cols {
            return Err(Error::InvalidImage(format!(
                "{rows}x{cols} image needs {} pixels, got {}",
                rows * cols,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 255.0)
        {
            return Err(Error::InvalidImage(format!(
                "intensity {bad} outside [0, 255]"
            )));
        }
        Ok(ImageMatrix { rows, cols, pixels })
    }

    /// Builds an image from a generator; values are clamped into `[0, 255]`.
    ///
    /// Panics if either dimension is zero or the generator yields NaN.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let v = f(r, c);
                assert!(!v.is_nan(), "pixel generator produced NaN at ({r}, {c})");
                pixels.push(v.clamp(0.0, 255.0));
            }
        }
        ImageMatrix { rows, cols, pixels }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::from_fn(rows, cols, |_, _| value)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.cols + col]
    }

    /// Bilinear sample at continuous coordinates (`x` along columns, `y`
    /// along rows, pixel centres at integers). Reads outside the raster
    /// contribute 0.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let at = |r: i64, c: i64| -> f64 {
            if r < 0 || c < 0 || r >= self.rows as i64 || c >= self.cols as i64 {
                0.0
            } else {
                self.pixels[r as usize * self.cols + c as usize]
            }
        };
        // Exact hits skip the neighbours so integer sampling is lossless.
        if fx == 0.0 && fy == 0.0 {
            return at(y0, x0);
        }
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
        let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Decodes a PNG or binary PGM file. Colour sources are reduced to luma
    /// with the Rec. 601 weights.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let format = image::guess_format(&bytes).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!("unsupported format {format:?} (expected PNG or PGM)"),
            });
        }
        let decoded =
            image::load_from_memory_with_format(&bytes, format).map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        Ok(Self::from_dynamic(&decoded))
    }

    fn from_dynamic(img: &DynamicImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels: Vec<f64> = if img.color().has_color() {
            img.to_rgb8()
                .pixels()
                .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .collect()
        } else {
            img.to_luma16()
                .pixels()
                .map(|p| p[0] as f64 / 257.0)
                .collect()
        };
        ImageMatrix {
            rows: h,
            cols: w,
            pixels,
        }
    }

    /// Rounds to 8 bits; handy for writing and for exact comparisons.
    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.cols as u32, self.rows as u32, |x, y| {
            Luma([self.get(y as usize, x as usize).round() as u8])
        })
    }

    /// Writes a PNG, or a binary PGM when the extension is `.pgm`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("pgm") => ImageFormat::Pnm,
            _ => ImageFormat::Png,
        };
        self.to_gray8()
            .save_with_format(path, format)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}
