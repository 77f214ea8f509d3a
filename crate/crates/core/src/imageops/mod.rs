//! Deterministic pixel mathematics shared by the whole pipeline.
//!
//! Every function here is pure: identical inputs give identical outputs and
//! nothing is shared between calls, so all of it is safe to run from any
//! number of worker threads.

mod composite;
mod hed;
mod inpaint;
mod regions;
mod smooth;
mod threshold;

pub use composite::composite;
pub use hed::{hed_to_rgb, rgb_to_hed, table_h_statistic, HedImage, StainMatrix, OD_EPSILON};
pub use inpaint::{inpaint, INPAINT_RADIUS};
pub use regions::{label_components, remove_small_regions};
pub use smooth::{gaussian_kernel, gaussian_smooth, smooth_binary};
pub use threshold::{percentile_threshold, Threshold};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted image side.
pub const MIN_SIDE: usize = 8;

/// RGB raster with channel values in `[0, 1]`, stored interleaved row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::Shape(format!(
                "image {height}x{width} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{height}x{width}x3 image needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("channel value {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Build from a per-pixel function; outputs are clamped into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        f: impl Fn(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x).iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::from_fn(height, width, |_, _| rgb)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn pixel_at(&self, idx: usize) -> [f64; 3] {
        let i = idx * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// The `h`×`w` window whose top-left corner is `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if y + h > self.height || x + w > self.width {
            return Err(Error::Shape(format!(
                "crop {h}x{w} at ({y}, {x}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Self::from_fn(h, w, |yy, xx| self.pixel(y + yy, x + xx))
    }

    /// Largest centred square of side at most `side`.
    pub fn center_square(&self, side: usize) -> Result<Self> {
        let s = side.min(self.height).min(self.width);
        self.crop((self.height - s) / 2, (self.width - s) / 2, s, s)
    }

    pub(crate) fn set_pixel_at(&mut self, idx: usize, rgb: [f64; 3]) {
        self.data[idx * 3..idx * 3 + 3].copy_from_slice(&rgb);
    }

    pub fn channel(&self, c: usize) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            data: self.data.iter().skip(c).step_by(3).copied().collect(),
        }
    }

    pub fn mean_rgb(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                acc[c] += px[c];
            }
        }
        let n = self.pixel_count() as f64;
        acc.map(|v| v / n)
    }

    /// Planar `[3, h, w]` copy, the layout the networks consume.
    pub fn to_planar(&self) -> Vec<f64> {
        let hw = self.pixel_count();
        let mut out = vec![0.0; 3 * hw];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + i] = px[c];
            }
        }
        out
    }

    /// Inverse of [`RgbImage::to_planar`]; values are clamped into `[0, 1]`.
    pub fn from_planar(height: usize, width: usize, planar: &[f64]) -> Result<Self> {
        let hw = height * width;
        if planar.len() != 3 * hw {
            return Err(Error::Shape(format!(
                "planar buffer of {} values for {height}x{width}",
                planar.len()
            )));
        }
        let mut data = vec![0.0; 3 * hw];
        for i in 0..hw {
            for c in 0..3 {
                data[i * 3 + c] = planar[c * hw + i].clamp(0.0, 1.0);
            }
        }
        Self::new(height, width, data)
    }
}

/// Single real-valued plane, e.g. one HED channel or a smoothed mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} raster needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// Hard `{0, 1}` mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn data(&self) -> &[bool] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len().max(1) as f64
    }
    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// `true` when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape() == other.shape() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&v| if v { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    /// Threshold a real raster: `v >= level` becomes set.
    pub fn from_raster(r: &Raster, level: f64) -> Self {
        Self {
            height: r.height,
            width: r.width,
            data: r.data.iter().map(|&v| v >= level).collect(),
        }
    }
}

/// Soft compositing mask with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftMask(Raster);

impl SoftMask {
    pub fn new(raster: Raster) -> Result<Self> {
        if let Some(v) = raster.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("soft mask value {v} outside [0,1]")));
        }
        Ok(Self(raster))
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Raster::filled(height, width, value))
    }

    pub fn from_binary(mask: &BinaryMask) -> Self {
        Self(mask.to_raster())
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }
    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }
    pub fn data(&self) -> &[f64] {
        &self.0.data
    }
}
