//! Error metrics, region statistics and the paired-patch packing used to
//! hand data to the image-translation trainer.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationSet, OpticalPropertyMap};
use crate::error::{Error, Result};
use crate::image::{ImageKind, Mask, ScalarImage};
use crate::rng;

pub const DEFAULT_PATCH_SIZE: usize = 256;

/// Normalized mean absolute error `Σ|p − r| / Σ r` over masked pixels.
pub fn nmae(pred: &ScalarImage, reference: &ScalarImage, mask: &Mask) -> Result<f64> {
    pred.ensure_same_dims(reference)?;
    if mask.dims() != pred.dims() {
        return Err(Error::DimensionMismatch { expected: pred.dims(), found: mask.dims() });
    }
    let (mut num, mut den, mut n) = (0.0, 0.0, 0usize);
    for ((&p, &r), &m) in pred.data().iter().zip(reference.data()).zip(mask.data()) {
        if m {
            num += (p - r).abs();
            den += r;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(num / den)
}

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    /// Largest square of side at most `side` centred in a `w × h` frame.
    pub fn centered(w: usize, h: usize, side: usize) -> Self {
        let s = side.min(w).min(h);
        Self { x: (w - s) / 2, y: (h - s) / 2, width: s, height: s }
    }

    /// Mask of a `w × h` frame selecting the pixels inside the rectangle.
    pub fn mask(&self, w: usize, h: usize) -> Mask {
        Mask::from_fn(w, h, |x, y| {
            (self.x..self.x + self.width).contains(&x) && (self.y..self.y + self.height).contains(&y)
        })
    }

    fn fits(&self, (w, h): (usize, usize)) -> bool {
        self.width > 0 && self.height > 0 && self.x + self.width <= w && self.y + self.height <= h
    }
}

/// Sample mean and standard deviation inside `roi`.
pub fn roi_stats(img: &ScalarImage, roi: Roi) -> Result<(f64, f64)> {
    if !roi.fits(img.dims()) {
        return Err(Error::OutOfBounds);
    }
    let values = || (roi.y..roi.y + roi.height).flat_map(|y| img.row(y)[roi.x..roi.x + roi.width].iter().copied());
    let n = (roi.width * roi.height) as f64;
    let mean = values().sum::<f64>() / n;
    let std =
        if n > 1.0 { libm::sqrt(values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)) } else { 0.0 };
    Ok((mean, std))
}

/// Which frame feeds the input channels and which ground truth the target
/// holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PackingMode {
    /// AC frame, uncorrected ground truth.
    N1,
    /// AC frame, profile-corrected ground truth.
    N2,
    /// DC frame, uncorrected ground truth.
    N3,
    /// DC frame, profile-corrected ground truth.
    N4,
}

impl PackingMode {
    pub const ALL: [PackingMode; 4] = [Self::N1, Self::N2, Self::N3, Self::N4];

    pub fn name(self) -> &'static str {
        match self {
            Self::N1 => "N1",
            Self::N2 => "N2",
            Self::N3 => "N3",
            Self::N4 => "N4",
        }
    }

    pub fn uses_ac_frame(self) -> bool {
        matches!(self, Self::N1 | Self::N2)
    }

    pub fn profile_corrected(self) -> bool {
        matches!(self, Self::N2 | Self::N4)
    }
}

/// Channel scales shared by exporter, importer and trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackingScales {
    /// μa stored as `μa / mua_scale` in the red target channel.
    pub mua_scale: f64,
    /// μs′ stored as `μs′ / musp_scale` in the green target channel.
    pub musp_scale: f64,
    /// Calibrated intensity ratios are divided by this before storage.
    pub input_scale: f64,
}

impl Default for PackingScales {
    fn default() -> Self {
        Self { mua_scale: 0.25, musp_scale: 2.5, input_scale: 4.0 }
    }
}

/// Round-half-up byte of a unit-interval value (clamped first).
pub fn quantize_unit(v: f64) -> u8 {
    libm::floor(v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum StridePolicy {
    Random { seed: u64, count: usize },
    Tiled,
}

/// Top-left `(row, col)` origins of square patches of side `patch`.
pub fn patch_origins(width: usize, height: usize, patch: usize, policy: StridePolicy) -> Result<Vec<(usize, usize)>> {
    if patch == 0 {
        return Err(Error::InvalidConfig("patch size must be positive"));
    }
    if width < patch || height < patch {
        return Err(Error::FrameTooSmall { width, height, patch });
    }
    Ok(match policy {
        StridePolicy::Tiled => {
            let mut out = Vec::new();
            for r in (0..=height - patch).step_by(patch) {
                for c in (0..=width - patch).step_by(patch) {
                    out.push((r, c));
                }
            }
            out
        }
        StridePolicy::Random { seed, count } => {
            let mut rng = rng::stream(seed, 0);
            (0..count).map(|_| (rng.random_range(0..=height - patch), rng.random_range(0..=width - patch))).collect()
        }
    })
}

/// The frame that feeds the input channels.
#[derive(Debug, Clone, Copy)]
pub enum InputFrame<'a> {
    Ac(&'a ScalarImage),
    Dc(&'a ScalarImage),
}

/// One input/target pair of interleaved RGB bytes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchPair {
    pub input_rgb: Vec<u8>,
    pub target_rgb: Vec<u8>,
    pub origin: (usize, usize),
    pub size: usize,
    pub mode: PackingMode,
}

/// Cuts co-registered input/target patches. Input red is `I / M_DC,ref`,
/// input green `I / M_AC,ref`; target red is μa and green μs′, each divided
/// by its scale. Blue is zero on both sides.
pub fn export_patches(
    frame: InputFrame<'_>,
    op: &OpticalPropertyMap,
    cal: &CalibrationSet,
    mode: PackingMode,
    policy: StridePolicy,
    patch: usize,
    scales: PackingScales,
) -> Result<Vec<PatchPair>> {
    let img = match (frame, mode.uses_ac_frame()) {
        (InputFrame::Ac(img), true) | (InputFrame::Dc(img), false) => img,
        (_, true) => return Err(Error::ModeMismatch { mode: mode.name(), expected: "AC" }),
        (_, false) => return Err(Error::ModeMismatch { mode: mode.name(), expected: "DC" }),
    };
    if op.profile_corrected != mode.profile_corrected() {
        return Err(Error::ModeMismatch {
            mode: mode.name(),
            expected: if mode.profile_corrected() { "profile-corrected" } else { "uncorrected" },
        });
    }
    img.ensure_kind(ImageKind::Intensity)?;
    img.ensure_same_dims(&op.mua)?;
    img.ensure_same_dims(&cal.m_dc_ref)?;
    cal.ensure_positive()?;
    let (w, h) = img.dims();
    let origins = patch_origins(w, h, patch, policy)?;
    let (i, dc, ac) = (img.data(), cal.m_dc_ref.data(), cal.m_ac_ref.data());
    let (mua, musp) = (op.mua.data(), op.musp.data());
    Ok(origins
        .into_iter()
        .map(|(r0, c0)| {
            let mut input_rgb = Vec::with_capacity(patch * patch * 3);
            let mut target_rgb = Vec::with_capacity(patch * patch * 3);
            for r in r0..r0 + patch {
                for c in c0..c0 + patch {
                    let k = r * w + c;
                    input_rgb.extend([
                        quantize_unit(i[k] / dc[k] / scales.input_scale),
                        quantize_unit(i[k] / ac[k] / scales.input_scale),
                        0,
                    ]);
                    target_rgb.extend([
                        quantize_unit(mua[k] / scales.mua_scale),
                        quantize_unit(musp[k] / scales.musp_scale),
                        0,
                    ]);
                }
            }
            PatchPair { input_rgb, target_rgb, origin: (r0, c0), size: patch, mode }
        })
        .collect())
}

/// Decodes a predicted RGB byte patch back into coefficient maps.
pub fn import_prediction(
    rgb: &[u8],
    width: usize,
    height: usize,
    pixel_pitch: f64,
    scales: PackingScales,
) -> Result<OpticalPropertyMap> {
    if rgb.len() != width * height * 3 {
        return Err(Error::InvalidImage("RGB buffer length differs from width x height x 3"));
    }
    let channel =
        |c: usize, scale: f64| -> Vec<f64> { rgb.chunks_exact(3).map(|px| px[c] as f64 / 255.0 * scale).collect() };
    OpticalPropertyMap::new(
        ScalarImage::new(width, height, pixel_pitch, ImageKind::Absorption, channel(0, scales.mua_scale))?,
        ScalarImage::new(width, height, pixel_pitch, ImageKind::ReducedScattering, channel(1, scales.musp_scale))?,
        Mask::filled(width, height, true),
        false,
    )
}

/// Masked comparison of a predicted map against a reference map.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub nmae_mua: f64,
    pub nmae_musp: f64,
    /// Means of the prediction over the mask.
    pub roi_mean_mua: f64,
    pub roi_mean_musp: f64,
    /// Fraction of masked pixels the prediction marks valid.
    pub valid_fraction: f64,
    /// `|p − r| / r · 100`, zero outside the mask or where `r = 0`.
    pub percent_diff_mua: ScalarImage,
    pub percent_diff_musp: ScalarImage,
}

pub fn compare_report(pred: &OpticalPropertyMap, reference: &OpticalPropertyMap, mask: &Mask) -> Result<Comparison> {
    let nmae_mua = nmae(&pred.mua, &reference.mua, mask)?;
    let nmae_musp = nmae(&pred.musp, &reference.musp, mask)?;
    let n = mask.count() as f64;
    let masked_mean =
        |img: &ScalarImage| img.data().iter().zip(mask.data()).filter(|(_, &m)| m).map(|(v, _)| v).sum::<f64>() / n;
    let valid = pred.valid.data().iter().zip(mask.data()).filter(|(&v, &m)| v && m).count() as f64;
    let diff = |p: &ScalarImage, r: &ScalarImage| {
        let data = p
            .data()
            .iter()
            .zip(r.data())
            .zip(mask.data())
            .map(|((&p, &r), &m)| if m && r != 0.0 { (p - r).abs() / r * 100.0 } else { 0.0 })
            .collect();
        ScalarImage::new(p.width(), p.height(), p.pixel_pitch(), ImageKind::PercentDifference, data)
    };
    Ok(Comparison {
        nmae_mua,
        nmae_musp,
        roi_mean_mua: masked_mean(&pred.mua),
        roi_mean_musp: masked_mean(&pred.musp),
        valid_fraction: valid / n,
        percent_diff_mua: diff(&pred.mua, &reference.mua)?,
        percent_diff_musp: diff(&pred.musp, &reference.musp)?,
    })
}
