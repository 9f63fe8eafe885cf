//! Raster containers and PNG/TIFF I/O.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed run canvas, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub height: usize,
    pub width: usize,
}

impl Default for Canvas {
    fn default() -> Self {
        Canvas {
            height: 64,
            width: 256,
        }
    }
}

impl Canvas {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::param("canvas dimensions must be positive"));
        }
        Ok(Canvas { height, width })
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::str::FromStr for Canvas {
    type Err = Error;

    /// Parses `HxW`, e.g. `64x256`.
    fn from_str(s: &str) -> Result<Self> {
        let (h, w) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::param(format!("canvas `{s}` is not of the form HxW")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::param(format!("canvas `{s}` is not of the form HxW")))
        };
        Canvas::new(parse(h)?, parse(w)?)
    }
}

/// Row-major grayscale image with intensities in `[0, 1]`, 1 = ink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape {
                expected: format!("{} pixels", width * height),
                actual: format!("{} pixels", pixels.len()),
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::param("intensities must lie in [0, 1]"));
        }
        Ok(RasterImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        RasterImage {
            width,
            height,
            pixels: vec![value.clamp(0.0, 1.0); width * height],
        }
    }

    pub fn zeros(canvas: Canvas) -> Self {
        Self::filled(canvas.width, canvas.height, 0.0)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn canvas(&self) -> Canvas {
        Canvas {
            height: self.height,
            width: self.width,
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn inverted(&self) -> Self {
        RasterImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| 1.0 - p).collect(),
        }
    }

    /// Fraction of pixels above 0.5.
    pub fn foreground_fraction(&self) -> f64 {
        self.pixels.iter().filter(|&&p| p > 0.5).count() as f64 / self.pixels.len() as f64
    }

    pub fn binarize(&self, cut: f64) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.pixels.iter().map(|&p| u8::from(p > cut)).collect(),
        }
    }

    pub fn ensure_shape(&self, canvas: Canvas) -> Result<()> {
        if self.canvas() != canvas {
            return Err(Error::Shape {
                expected: format!("{}x{}", canvas.height, canvas.width),
                actual: format!("{}x{}", self.height, self.width),
            });
        }
        Ok(())
    }

    /// Load a scan, reducing RGB by luminance and normalizing polarity so that
    /// ink is 1: an image whose mean is above 0.5 is assumed to be dark ink on
    /// light paper and is inverted.
    pub fn load_scan(path: &Path) -> Result<Self> {
        let img = Self::load_raw(path)?;
        Ok(if img.mean() > 0.5 { img.inverted() } else { img })
    }

    /// Load a grayscale raster without touching polarity.
    pub fn load_raw(path: &Path) -> Result<Self> {
        let dynimg = image::open(path)?;
        let luma = dynimg.to_luma16();
        let (w, h) = luma.dimensions();
        let pixels = luma
            .as_raw()
            .iter()
            .map(|&v| f64::from(v) / f64::from(u16::MAX))
            .collect();
        Self::new(w as usize, h as usize, pixels)
    }

    /// Save as 8-bit grayscale, intensity 1 rendered white.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let data: Vec<u8> = self
            .pixels
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        write_png(path, self.width, self.height, png::BitDepth::Eight, &data)
    }
}

/// Row-major binary mask, 1 = stroke foreground.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape {
                expected: format!("{} bits", width * height),
                actual: format!("{} bits", bits.len()),
            });
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::param("mask bits must be 0 or 1"));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    /// Build from rows of `0`/`1`, handy in tests.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::param("ragged rows"));
        }
        Self::from_bits(width, height, rows.concat())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_blank(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn canvas(&self) -> Canvas {
        Canvas {
            height: self.height,
            width: self.width,
        }
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of the foreground.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    b = Some(match b {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        b
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits
            .iter()
            .zip(&other.bits)
            .all(|(&a, &b)| a == 0 || b != 0)
    }

    pub fn to_image(&self) -> RasterImage {
        RasterImage {
            width: self.width,
            height: self.height,
            pixels: self.bits.iter().map(|&b| f64::from(b)).collect(),
        }
    }

    /// Save as a 1-bit PNG (foreground white).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let stride = self.width.div_ceil(8);
        let mut packed = vec![0u8; stride * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    packed[y * stride + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        write_png(path, self.width, self.height, png::BitDepth::One, &packed)
    }

    /// Load any grayscale PNG as a mask, thresholding at mid-gray.
    pub fn load_png(path: &Path) -> Result<Self> {
        Ok(RasterImage::load_raw(path)?.binarize(0.5))
    }
}

fn write_png(path: &Path, width: usize, height: usize, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(depth);
    let to_err = |e: png::EncodingError| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(data).map_err(to_err)?;
    writer.finish().map_err(to_err)?;
    Ok(())
}
