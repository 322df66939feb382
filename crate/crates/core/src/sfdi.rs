//! Six-image SFDI: three-phase demodulation, reference calibration, table
//! inversion, and a fringe-profilometry height/angle correction path.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use crate::calibration::{CalibrationMeta, CalibrationSet, OpticalPropertyMap, REFERENCE_WAVELENGTH_NM};
use crate::error::{Error, Result};
use crate::image::{mean_of_images, ImageKind, Mask, ScalarImage};
use crate::lut::{LookupTable, DEFAULT_FX_AC};

/// Phase offsets of the three projected patterns.
pub const PHASES: [f64; 3] = [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0];

pub const DEFAULT_FX_PROFILOMETRY: f64 = 0.15;

/// Pixels whose surface normal is at least this far from the camera axis
/// are rejected by the profile-corrected pipeline.
pub const MAX_SURFACE_ANGLE: f64 = 75.0 * PI / 180.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub dc_frames: [ScalarImage; 3],
    pub ac_frames: [ScalarImage; 3],
    pub fx_ac: f64,
    pub phases: [f64; 3],
}

impl FrameSet {
    pub fn new(dc_frames: [ScalarImage; 3], ac_frames: [ScalarImage; 3], fx_ac: f64) -> Result<Self> {
        let first = &dc_frames[0];
        for frame in dc_frames.iter().chain(&ac_frames) {
            frame.ensure_kind(ImageKind::Intensity)?;
            first.ensure_same_dims(frame)?;
        }
        if !(fx_ac > 0.0) {
            return Err(Error::InvalidConfig("AC spatial frequency must be positive"));
        }
        Ok(Self { dc_frames, ac_frames, fx_ac, phases: PHASES })
    }

    pub fn with_default_frequency(dc_frames: [ScalarImage; 3], ac_frames: [ScalarImage; 3]) -> Result<Self> {
        Self::new(dc_frames, ac_frames, DEFAULT_FX_AC)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dc_frames[0].dims()
    }
}

/// Modulation amplitude from three frames shifted by a third of a period.
pub fn demodulate_ac(i1: &ScalarImage, i2: &ScalarImage, i3: &ScalarImage) -> Result<ScalarImage> {
    i1.ensure_same_dims(i2)?;
    i1.ensure_same_dims(i3)?;
    let scale = core::f64::consts::SQRT_2 / 3.0;
    let data = i1
        .data()
        .iter()
        .zip(i2.data())
        .zip(i3.data())
        .map(|((&a, &b), &c)| scale * libm::sqrt((a - b) * (a - b) + (b - c) * (b - c) + (c - a) * (c - a)))
        .collect();
    ScalarImage::new(i1.width(), i1.height(), i1.pixel_pitch(), ImageKind::Amplitude, data)
}

/// Planar amplitude: the pixel-wise mean of the DC frames.
pub fn demodulate_dc(frames: &[ScalarImage]) -> Result<ScalarImage> {
    mean_of_images(frames)?.with_kind(ImageKind::Amplitude)
}

fn demodulate(frames: &FrameSet) -> Result<(ScalarImage, ScalarImage)> {
    let [a1, a2, a3] = &frames.ac_frames;
    Ok((demodulate_dc(&frames.dc_frames)?, demodulate_ac(a1, a2, a3)?))
}

/// Builds a calibration from frames of a homogeneous reference phantom with
/// known optical properties.
pub fn calibrate_from_phantom(
    phantom: &FrameSet,
    lut: &LookupTable,
    ref_mua: f64,
    ref_musp: f64,
) -> Result<CalibrationSet> {
    let (rd_dc, rd_ac) = lut.forward(ref_mua, ref_musp)?;
    let (m_dc, m_ac) = demodulate(phantom)?;
    let meta = CalibrationMeta {
        rd_predicted_dc: rd_dc,
        rd_predicted_ac: rd_ac,
        ref_mua,
        ref_musp,
        wavelength_nm: REFERENCE_WAVELENGTH_NM,
    };
    CalibrationSet::new(m_dc, m_ac, meta)
}

/// Inverts per-pixel reference-normalised amplitude ratios.
#[allow(clippy::too_many_arguments)]
fn invert_ratios(
    lut: &LookupTable,
    cal: &CalibrationSet,
    ratio_dc: impl Fn(usize) -> f64,
    ratio_ac: impl Fn(usize) -> f64,
    (width, height): (usize, usize),
    pitch: f64,
    mut extra_valid: impl FnMut(usize) -> bool,
    profile_corrected: bool,
) -> Result<OpticalPropertyMap> {
    let n = width * height;
    let mut mua = Vec::with_capacity(n);
    let mut musp = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for k in 0..n {
        let rd_dc = ratio_dc(k) * cal.rd_predicted_dc;
        let rd_ac = ratio_ac(k) * cal.rd_predicted_ac;
        let inv = lut.invert(rd_dc, rd_ac);
        mua.push(inv.mua);
        musp.push(inv.musp);
        valid.push(inv.valid && extra_valid(k));
    }
    OpticalPropertyMap::new(
        ScalarImage::new(width, height, pitch, ImageKind::Absorption, mua)?,
        ScalarImage::new(width, height, pitch, ImageKind::ReducedScattering, musp)?,
        Mask::new(width, height, valid)?,
        profile_corrected,
    )
}

fn check_calibration(frames: &FrameSet, cal: &CalibrationSet) -> Result<()> {
    let (w, h) = frames.dims();
    if cal.m_dc_ref.dims() != (w, h) {
        return Err(Error::DimensionMismatch { expected: cal.m_dc_ref.dims(), found: (w, h) });
    }
    cal.ensure_positive()
}

/// Demodulates, calibrates and inverts a six-frame set pixel by pixel.
pub fn process_sfdi(frames: &FrameSet, cal: &CalibrationSet, lut: &LookupTable) -> Result<OpticalPropertyMap> {
    check_calibration(frames, cal)?;
    let (m_dc, m_ac) = demodulate(frames)?;
    let (dc, ac) = (m_dc.data(), m_ac.data());
    let (rdc, rac) = (cal.m_dc_ref.data(), cal.m_ac_ref.data());
    invert_ratios(lut, cal, |k| dc[k] / rdc[k], |k| ac[k] / rac[k], m_dc.dims(), m_dc.pixel_pitch(), |_| true, false)
}

/// Wrapped fringe phase plus the pixels where it was undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct WrappedPhase {
    pub phase: ScalarImage,
    pub degenerate: Mask,
}

/// Wrapped phase in `(−π, π]` of three fringe frames at offsets
/// `0, 2π/3, 4π/3`. For `I_k = A + B cos(ψ + φ_k)` the result is `ψ`.
/// Pixels with no modulation are flagged and filled from the nearest valid
/// pixel in the same row.
pub fn profilometry_phase(i1: &ScalarImage, i2: &ScalarImage, i3: &ScalarImage) -> Result<WrappedPhase> {
    i1.ensure_same_dims(i2)?;
    i1.ensure_same_dims(i3)?;
    let (w, h) = i1.dims();
    let mut phase = Vec::with_capacity(w * h);
    let mut degenerate = Vec::with_capacity(w * h);
    for ((&a, &b), &c) in i1.data().iter().zip(i2.data()).zip(i3.data()) {
        let y = libm::sqrt(3.0) * (c - b);
        let x = 2.0 * a - b - c;
        let scale = a.abs() + b.abs() + c.abs();
        let flat = libm::hypot(x, y) <= 1e-12 * scale || (x == 0.0 && y == 0.0);
        degenerate.push(flat);
        let p = libm::atan2(y, x);
        phase.push(if flat {
            0.0
        } else if p <= -PI {
            PI
        } else {
            p
        });
    }
    for row in 0..h {
        fill_row(&mut phase[row * w..(row + 1) * w], &degenerate[row * w..(row + 1) * w]);
    }
    Ok(WrappedPhase {
        phase: ScalarImage::new(w, h, i1.pixel_pitch(), ImageKind::Phase, phase)?,
        degenerate: Mask::new(w, h, degenerate)?,
    })
}

/// Replaces flagged entries with the nearest unflagged value (left wins ties).
fn fill_row(values: &mut [f64], flagged: &[bool]) {
    let n = values.len();
    let mut left = alloc::vec![None; n];
    let mut last = None;
    for i in 0..n {
        if !flagged[i] {
            last = Some(i);
        }
        left[i] = last;
    }
    let mut right = None;
    for i in (0..n).rev() {
        if !flagged[i] {
            right = Some(i);
            continue;
        }
        let source = match (left[i], right) {
            (Some(l), Some(r)) => Some(if i - l <= r - i { l } else { r }),
            (l, r) => l.or(r),
        };
        if let Some(j) = source {
            values[i] = values[j];
        }
    }
}

fn wrap(v: f64) -> f64 {
    let r = libm::remainder(v, 2.0 * PI);
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    /// Elevation above the calibration plane, mm.
    pub height: ScalarImage,
    /// Angle between surface normal and camera axis, radians.
    pub surface_normal_angle: ScalarImage,
    /// Rows where unwrapping met a jump it could not resolve.
    pub flagged_rows: Vec<usize>,
}

/// Row-wise unwrapping of the phase difference against the flat reference,
/// scaled to height by `k_height` (mm per radian).
pub fn unwrap_and_height(phase: &ScalarImage, reference_phase: &ScalarImage, k_height: f64) -> Result<HeightMap> {
    phase.ensure_same_dims(reference_phase)?;
    let (w, h) = phase.dims();
    let pitch = phase.pixel_pitch();
    let mut height = Vec::with_capacity(w * h);
    let mut flagged_rows = Vec::new();
    for y in 0..h {
        let (p, r) = (phase.row(y), reference_phase.row(y));
        let mut prev_wrapped = wrap(p[0] - r[0]);
        let mut acc = prev_wrapped;
        let mut suspicious = false;
        height.push(k_height * acc);
        for x in 1..w {
            let d = wrap(p[x] - r[x]);
            let step = wrap(d - prev_wrapped);
            // Steps near ±π are ambiguous: the true step may have aliased.
            suspicious |= step.abs() > 0.9 * PI;
            acc += step;
            prev_wrapped = d;
            height.push(k_height * acc);
        }
        if suspicious {
            flagged_rows.push(y);
        }
    }
    let grad = |v: &[f64], i: usize, len: usize, stride: usize| -> f64 {
        if len < 2 {
            0.0
        } else if i == 0 {
            (v[stride] - v[0]) / pitch
        } else if i == len - 1 {
            (v[i * stride] - v[(i - 1) * stride]) / pitch
        } else {
            (v[(i + 1) * stride] - v[(i - 1) * stride]) / (2.0 * pitch)
        }
    };
    let mut angle = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let gx = grad(&height[y * w..(y + 1) * w], x, w, 1);
            let gy = grad(&height[x..], y, h, w);
            angle.push(libm::atan(libm::hypot(gx, gy)).min(FRAC_PI_2 - f64::EPSILON));
        }
    }
    Ok(HeightMap {
        height: ScalarImage::new(w, h, pitch, ImageKind::Height, height)?,
        surface_normal_angle: ScalarImage::new(w, h, pitch, ImageKind::Phase, angle)?,
        flagged_rows,
    })
}

/// Reference amplitudes recorded at several known elevations, the flat
/// reference fringe phase, and the phase-to-height factor.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightCalibration {
    pub k_height: f64,
    pub fx_profilometry: f64,
    pub reference_phase: ScalarImage,
    pub levels: Vec<HeightLevel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeightLevel {
    pub height: f64,
    pub m_dc: ScalarImage,
    pub m_ac: ScalarImage,
}

impl HeightCalibration {
    pub fn new(
        k_height: f64,
        fx_profilometry: f64,
        reference_phase: ScalarImage,
        mut levels: Vec<HeightLevel>,
    ) -> Result<Self> {
        if !(k_height > 0.0) || !(fx_profilometry > 0.0) {
            return Err(Error::InvalidConfig("k_height and profilometry frequency must be positive"));
        }
        if levels.len() < 2 {
            return Err(Error::InvalidConfig("height calibration needs at least two heights"));
        }
        reference_phase.ensure_kind(ImageKind::Phase)?;
        levels.sort_by(|a, b| a.height.total_cmp(&b.height));
        if levels.windows(2).any(|p| p[0].height == p[1].height) {
            return Err(Error::InvalidConfig("calibration heights must be distinct"));
        }
        for level in &levels {
            level.m_dc.ensure_kind(ImageKind::Amplitude)?;
            level.m_ac.ensure_kind(ImageKind::Amplitude)?;
            reference_phase.ensure_same_dims(&level.m_dc)?;
            reference_phase.ensure_same_dims(&level.m_ac)?;
            let positive = |img: &ScalarImage| img.data().iter().all(|&v| v > 0.0);
            if !positive(&level.m_dc) || !positive(&level.m_ac) {
                return Err(Error::InvalidConfig("calibration amplitudes must be positive"));
            }
        }
        Ok(Self { k_height, fx_profilometry, reference_phase, levels })
    }

    /// Reference amplitudes at pixel `k` for elevation `h`, linearly
    /// interpolated between (or extrapolated from) the bracketing levels.
    fn amplitudes_at(&self, k: usize, h: f64) -> (f64, f64) {
        let n = self.levels.len();
        let upper = self.levels.partition_point(|l| l.height <= h).clamp(1, n - 1);
        let (lo, hi) = (&self.levels[upper - 1], &self.levels[upper]);
        let t = (h - lo.height) / (hi.height - lo.height);
        let lerp = |a: &ScalarImage, b: &ScalarImage| {
            let (va, vb) = (a.data()[k], b.data()[k]);
            if t == 0.0 {
                va
            } else {
                va + t * (vb - va)
            }
        };
        (lerp(&lo.m_dc, &hi.m_dc), lerp(&lo.m_ac, &hi.m_ac))
    }
}

/// SFDI with each pixel's amplitudes rescaled for its elevation and surface
/// tilt before calibration. The height-dependent reference enters as a ratio
/// to its value at zero elevation, so a flat sample at the calibration plane
/// reproduces [`process_sfdi`] exactly.
pub fn process_sfdi_profile_corrected(
    frames: &FrameSet,
    prof_frames: &[ScalarImage; 3],
    cal: &CalibrationSet,
    lut: &LookupTable,
    height_cal: &HeightCalibration,
) -> Result<OpticalPropertyMap> {
    check_calibration(frames, cal)?;
    let (m_dc, m_ac) = demodulate(frames)?;
    m_dc.ensure_same_dims(&prof_frames[0])?;
    m_dc.ensure_same_dims(&height_cal.reference_phase)?;
    let wrapped = profilometry_phase(&prof_frames[0], &prof_frames[1], &prof_frames[2])?;
    let hm = unwrap_and_height(&wrapped.phase, &height_cal.reference_phase, height_cal.k_height)?;
    let (w, _) = m_dc.dims();
    let heights = hm.height.data();
    let angles = hm.surface_normal_angle.data();

    let mut ratio_dc = Vec::with_capacity(heights.len());
    let mut ratio_ac = Vec::with_capacity(heights.len());
    for (k, (&h, &theta)) in heights.iter().zip(angles).enumerate() {
        let (dc_h, ac_h) = height_cal.amplitudes_at(k, h);
        let (dc_0, ac_0) = height_cal.amplitudes_at(k, 0.0);
        let cos = libm::cos(theta);
        // Identity factors are applied as exact ones to keep the flat case bit-exact.
        let factor = |ref_h: f64, ref_0: f64| {
            let g = if ref_h == ref_0 { 1.0 } else { ref_h / ref_0 };
            if theta == 0.0 {
                g
            } else {
                g * cos
            }
        };
        let (fdc, fac) = (factor(dc_h, dc_0), factor(ac_h, ac_0));
        ratio_dc.push(if fdc == 1.0 {
            m_dc.data()[k] / cal.m_dc_ref.data()[k]
        } else {
            m_dc.data()[k] / (cal.m_dc_ref.data()[k] * fdc)
        });
        ratio_ac.push(if fac == 1.0 {
            m_ac.data()[k] / cal.m_ac_ref.data()[k]
        } else {
            m_ac.data()[k] / (cal.m_ac_ref.data()[k] * fac)
        });
    }
    let flagged = &hm.flagged_rows;
    invert_ratios(
        lut,
        cal,
        |k| ratio_dc[k],
        |k| ratio_ac[k],
        m_dc.dims(),
        m_dc.pixel_pitch(),
        |k| angles[k] < MAX_SURFACE_ANGLE && !flagged.contains(&(k / w)),
        true,
    )
}
