//! Scalar images with physical units.
//!
//! Layout is row-major with the origin at the top-left pixel; `x` grows to the
//! right along the fringe-modulation axis and `y` grows downwards.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Camera pixel pitch of the reference instrument, in mm.
pub const DEFAULT_PIXEL_PITCH: f64 = 0.278;

/// Hard ceiling for reflectance pixels. Values in `(1.0, REFLECTANCE_CEILING]`
/// are accepted but logged.
pub const REFLECTANCE_CEILING: f64 = 1.5;

/// Physical meaning of the values stored in a [`ScalarImage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ImageKind {
    Intensity,
    Amplitude,
    Reflectance,
    Absorption,
    ReducedScattering,
    Height,
    Phase,
    PercentDifference,
}

impl ImageKind {
    /// Whether values of this kind must be non-negative.
    pub fn is_nonnegative(self) -> bool {
        !matches!(self, ImageKind::Height | ImageKind::Phase)
    }

    pub fn name(self) -> &'static str {
        match self {
            ImageKind::Intensity => "intensity",
            ImageKind::Amplitude => "amplitude",
            ImageKind::Reflectance => "reflectance",
            ImageKind::Absorption => "absorption",
            ImageKind::ReducedScattering => "reduced_scattering",
            ImageKind::Height => "height",
            ImageKind::Phase => "phase",
            ImageKind::PercentDifference => "percent_difference",
        }
    }
}

/// A 2D grid of physical-unit scalars.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    width: usize,
    height: usize,
    pixel_pitch: f64,
    kind: ImageKind,
    data: Vec<f64>,
}

impl ScalarImage {
    /// Builds an image, checking the invariants of its kind.
    pub fn new(width: usize, height: usize, pixel_pitch: f64, kind: ImageKind, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("image must have at least one pixel"));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage("data length differs from width x height"));
        }
        if !(pixel_pitch > 0.0) || !pixel_pitch.is_finite() {
            return Err(Error::InvalidImage("pixel pitch must be positive"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite pixel value"));
        }
        if kind.is_nonnegative() && data.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidImage("negative value in a non-negative image kind"));
        }
        if kind == ImageKind::Reflectance {
            let mut bright = 0usize;
            for &v in &data {
                if v > REFLECTANCE_CEILING {
                    return Err(Error::InvalidImage("reflectance above 1.5"));
                }
                if v > 1.0 {
                    bright += 1;
                }
            }
            if bright > 0 {
                log::warn!("{bright} reflectance pixels exceed 1.0");
            }
        }
        Ok(Self { width, height, pixel_pitch, kind, data })
    }

    pub fn filled(width: usize, height: usize, pixel_pitch: f64, kind: ImageKind, value: f64) -> Result<Self> {
        Self::new(width, height, pixel_pitch, kind, vec![value; width * height])
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        pixel_pitch: f64,
        kind: ImageKind,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, pixel_pitch, kind, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_pitch(&self) -> f64 {
        self.pixel_pitch
    }

    pub fn kind(&self) -> ImageKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Re-labels the image, re-checking the invariants of the new kind.
    pub fn with_kind(self, kind: ImageKind) -> Result<Self> {
        Self::new(self.width, self.height, self.pixel_pitch, kind, self.data)
    }

    /// Applies `f` per pixel, producing an image of `kind`.
    pub fn map(&self, kind: ImageKind, f: impl Fn(f64) -> f64) -> Result<Self> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self::new(self.width, self.height, self.pixel_pitch, kind, data)
    }

    pub fn ensure_same_dims(&self, other: &ScalarImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch { expected: self.dims(), found: other.dims() });
        }
        Ok(())
    }

    pub fn ensure_kind(&self, kind: ImageKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::KindMismatch { expected: kind, found: self.kind });
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// A per-pixel boolean mask (true = selected / valid).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidImage("mask length differs from width x height"));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// All pixels at least `border` pixels away from every edge.
    pub fn interior(width: usize, height: usize, border: usize) -> Self {
        Self::from_fn(width, height, |x, y| x >= border && y >= border && x + border < width && y + border < height)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch { expected: self.dims(), found: other.dims() });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect();
        Ok(Mask { width: self.width, height: self.height, data })
    }
}

/// Per-pixel arithmetic mean of equally sized images of one kind.
pub fn mean_of_images(images: &[ScalarImage]) -> Result<ScalarImage> {
    let first = images.first().ok_or(Error::EmptyList)?;
    for img in &images[1..] {
        first.ensure_same_dims(img)?;
        img.ensure_kind(first.kind)?;
    }
    let n = images.len() as f64;
    // Summing in sorted order makes the result independent of list order.
    let mut values = Vec::with_capacity(images.len());
    let data = (0..first.data.len())
        .map(|i| {
            values.clear();
            values.extend(images.iter().map(|img| img.data[i]));
            values.sort_unstable_by(f64::total_cmp);
            values.iter().sum::<f64>() / n
        })
        .collect();
    ScalarImage::new(first.width, first.height, first.pixel_pitch, first.kind, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> ScalarImage {
        ScalarImage::filled(4, 3, DEFAULT_PIXEL_PITCH, ImageKind::Intensity, v).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        let bad_len = ScalarImage::new(2, 2, 1.0, ImageKind::Intensity, vec![0.0; 3]);
        assert!(matches!(bad_len, Err(Error::InvalidImage(_))));
        let bad_pitch = ScalarImage::new(1, 1, 0.0, ImageKind::Intensity, vec![0.0]);
        assert!(bad_pitch.is_err());
        let negative = ScalarImage::new(1, 1, 1.0, ImageKind::Absorption, vec![-0.1]);
        assert!(negative.is_err());
        assert!(ScalarImage::new(1, 1, 1.0, ImageKind::Height, vec![-3.0]).is_ok());
    }

    #[test]
    fn reflectance_ceiling() {
        assert!(ScalarImage::new(1, 1, 1.0, ImageKind::Reflectance, vec![1.2]).is_ok());
        assert!(ScalarImage::new(1, 1, 1.0, ImageKind::Reflectance, vec![1.5]).is_ok());
        assert!(ScalarImage::new(1, 1, 1.0, ImageKind::Reflectance, vec![1.51]).is_err());
    }

    #[test]
    fn mean_single_image_is_identity() {
        let a = ScalarImage::from_fn(3, 2, 0.5, ImageKind::Intensity, |x, y| (x + 3 * y) as f64).unwrap();
        assert_eq!(mean_of_images(core::slice::from_ref(&a)).unwrap(), a);
    }

    #[test]
    fn mean_of_constants() {
        let m = mean_of_images(&[constant(9.0), constant(10.0), constant(11.0)]).unwrap();
        assert!(m.data().iter().all(|&v| v == 10.0));
        let m = mean_of_images(&[constant(0.0), constant(0.0), constant(6.0)]).unwrap();
        assert!(m.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn mean_errors() {
        assert_eq!(mean_of_images(&[]), Err(Error::EmptyList));
        let small = ScalarImage::filled(2, 2, 1.0, ImageKind::Intensity, 1.0).unwrap();
        assert!(matches!(mean_of_images(&[constant(1.0), small]), Err(Error::DimensionMismatch { .. })));
        let amp = ScalarImage::filled(4, 3, 1.0, ImageKind::Amplitude, 1.0).unwrap();
        assert!(matches!(mean_of_images(&[constant(1.0), amp]), Err(Error::KindMismatch { .. })));
    }

    #[test]
    fn interior_mask() {
        let m = Mask::interior(10, 8, 2);
        assert_eq!(m.count(), 6 * 4);
        assert!(!m.get(1, 4));
        assert!(m.get(2, 2));
        assert!(!m.get(8, 2));
    }
}
