//! Pixel-level primitives over 8-bit grayscale rasters: BT.601 luma
//! conversion, Laplacian-variance blurriness and gray-level-difference
//! contrast over rectangular regions.
//!
//! Region measurements never fail on small or edge-clipped regions. A region
//! too small to carry a measurement yields `0.0` with `degenerate` set, so a
//! face at the border of a frame cannot abort a batch run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("failed to decode {path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Row-major 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    luma: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, luma: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize;
        if luma.len() != expected {
            return Err(ImagingError::InvalidImage(format!(
                "expected {expected} luma values for {width}x{height}, got {}",
                luma.len()
            )));
        }
        Ok(Self {
            width,
            height,
            luma,
        })
    }

    /// Builds an image from rows of equal length.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self, ImagingError> {
        let height = rows.len() as u32;
        let width = rows.first().map_or(0, |r| r.len()) as u32;
        if rows.iter().any(|r| r.len() as u32 != width) {
            return Err(ImagingError::InvalidImage("ragged rows".into()));
        }
        Self::new(width, height, rows.concat())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn luma(&self) -> &[u8] {
        &self.luma
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.luma[y as usize * self.width as usize + x as usize]
    }

    pub fn full_region(&self) -> RectRegion {
        RectRegion::new(0, 0, self.width, self.height)
    }

    /// Decodes a PNG or JPEG file, converting colour inputs to BT.601 luma.
    pub fn open(path: &Path) -> Result<Self, ImagingError> {
        let decoded = image::open(path).map_err(|source| ImagingError::Decode {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_dynamic(&decoded)
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Result<Self, ImagingError> {
        match img {
            image::DynamicImage::ImageLuma8(g) => {
                Self::new(g.width(), g.height(), g.as_raw().clone())
            }
            other => to_grayscale(&other.to_rgb8()),
        }
    }

    pub fn to_luma_image(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width, self.height, self.luma.clone())
            .expect("dimensions validated at construction")
    }
}

/// Axis-aligned pixel rectangle, top-left anchored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RectRegion {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl RectRegion {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Intersects the region with a `width` x `height` image. `None` when
    /// nothing of the region remains.
    pub fn clip_to(&self, width: u32, height: u32) -> Option<RectRegion> {
        let x1 = (self.x as u64 + self.w as u64).min(width as u64);
        let y1 = (self.y as u64 + self.h as u64).min(height as u64);
        if (self.x as u64) >= x1 || (self.y as u64) >= y1 {
            return None;
        }
        Some(RectRegion::new(
            self.x,
            self.y,
            (x1 - self.x as u64) as u32,
            (y1 - self.y as u64) as u32,
        ))
    }

    /// Area of the intersection with `other`.
    pub fn overlap_area(&self, other: &RectRegion) -> u64 {
        let x0 = self.x.max(other.x) as u64;
        let y0 = self.y.max(other.y) as u64;
        let x1 = (self.x as u64 + self.w as u64).min(other.x as u64 + other.w as u64);
        let y1 = (self.y as u64 + self.h as u64).min(other.y as u64 + other.h as u64);
        if x1 <= x0 || y1 <= y0 {
            0
        } else {
            (x1 - x0) * (y1 - y0)
        }
    }
}

/// A region measurement. `degenerate` is set when the clipped region was too
/// small for the measure to be defined; `value` is then `0.0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub value: f64,
    pub degenerate: bool,
}

impl Measurement {
    fn defined(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    fn degenerate() -> Self {
        Self {
            value: 0.0,
            degenerate: true,
        }
    }
}

/// BT.601 luma of one RGB pixel, rounded half away from zero.
#[inline]
pub fn luma_bt601(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    y.round().clamp(0.0, 255.0) as u8
}

pub fn to_grayscale(rgb: &image::RgbImage) -> Result<GrayImage, ImagingError> {
    let luma = rgb
        .pixels()
        .map(|p| luma_bt601(p[0], p[1], p[2]))
        .collect();
    GrayImage::new(rgb.width(), rgb.height(), luma)
}

/// Population variance of the 4-neighbour Laplacian response over the
/// interior of `region` (the region minus its 1-pixel border).
pub fn laplacian_variance(img: &GrayImage, region: &RectRegion) -> Measurement {
    let Some(r) = region.clip_to(img.width, img.height) else {
        return Measurement::degenerate();
    };
    if r.w < 3 || r.h < 3 {
        return Measurement::degenerate();
    }
    let mut responses = Vec::with_capacity(((r.w - 2) * (r.h - 2)) as usize);
    for y in r.y + 1..r.y + r.h - 1 {
        for x in r.x + 1..r.x + r.w - 1 {
            let c = img.get(x, y) as i32;
            let sum = img.get(x, y - 1) as i32
                + img.get(x, y + 1) as i32
                + img.get(x - 1, y) as i32
                + img.get(x + 1, y) as i32;
            responses.push((sum - 4 * c) as f64);
        }
    }
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    let var = responses.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Measurement::defined(var)
}

/// Histogram of absolute gray-level differences over unordered 4-adjacent
/// pixel pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DifferenceHistogram {
    counts: [u64; 256],
    total_pairs: u64,
}

impl DifferenceHistogram {
    pub fn over(img: &GrayImage, region: &RectRegion) -> Self {
        let mut counts = [0u64; 256];
        let mut total_pairs = 0;
        if let Some(r) = region.clip_to(img.width, img.height) {
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    let v = img.get(x, y);
                    if x + 1 < r.x + r.w {
                        counts[v.abs_diff(img.get(x + 1, y)) as usize] += 1;
                        total_pairs += 1;
                    }
                    if y + 1 < r.y + r.h {
                        counts[v.abs_diff(img.get(x, y + 1)) as usize] += 1;
                        total_pairs += 1;
                    }
                }
            }
        }
        Self {
            counts,
            total_pairs,
        }
    }

    pub fn counts(&self) -> &[u64; 256] {
        &self.counts
    }

    pub fn total_pairs(&self) -> u64 {
        self.total_pairs
    }

    /// `P(d)` for every difference `d`; all zeros when there are no pairs.
    pub fn probabilities(&self) -> Vec<f64> {
        if self.total_pairs == 0 {
            return vec![0.0; 256];
        }
        let total = self.total_pairs as f64;
        self.counts.iter().map(|&c| c as f64 / total).collect()
    }

    /// `sum_d d^2 P(d)`. The numerator is accumulated in integers so the
    /// result is a single correctly-rounded division.
    pub fn contrast(&self) -> Measurement {
        if self.total_pairs == 0 {
            return Measurement::degenerate();
        }
        let weighted: u64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(d, &c)| (d as u64 * d as u64) * c)
            .sum();
        Measurement::defined(weighted as f64 / self.total_pairs as f64)
    }
}

pub fn contrast(img: &GrayImage, region: &RectRegion) -> Measurement {
    DifferenceHistogram::over(img, region).contrast()
}
