//! Reference-phantom calibration and calibrated diffuse reflectance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageKind, Mask, ScalarImage};

/// Optical properties of the reference phantom at 660 nm, in mm⁻¹.
pub const REFERENCE_MUA: f64 = 0.0239;
pub const REFERENCE_MUSP: f64 = 0.957;
pub const REFERENCE_WAVELENGTH_NM: f64 = 660.0;

/// Demodulated amplitudes of a homogeneous reference phantom together with
/// the model reflectances predicted for its known optical properties.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub m_dc_ref: ScalarImage,
    pub m_ac_ref: ScalarImage,
    pub rd_predicted_dc: f64,
    pub rd_predicted_ac: f64,
    pub ref_mua: f64,
    pub ref_musp: f64,
    pub wavelength: f64,
}

/// Scalar metadata of a [`CalibrationSet`], as stored next to its images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationMeta {
    pub rd_predicted_dc: f64,
    pub rd_predicted_ac: f64,
    pub ref_mua: f64,
    pub ref_musp: f64,
    pub wavelength_nm: f64,
}

impl CalibrationSet {
    pub fn new(m_dc_ref: ScalarImage, m_ac_ref: ScalarImage, meta: CalibrationMeta) -> Result<Self> {
        m_dc_ref.ensure_kind(ImageKind::Amplitude)?;
        m_ac_ref.ensure_kind(ImageKind::Amplitude)?;
        m_dc_ref.ensure_same_dims(&m_ac_ref)?;
        for (r, v) in [(meta.rd_predicted_dc, "dc"), (meta.rd_predicted_ac, "ac")] {
            if !(r > 0.0 && r < 1.0) {
                log::error!("predicted {v} reflectance {r} outside (0, 1)");
                return Err(Error::InvalidConfig("predicted reflectance must lie in (0, 1)"));
            }
        }
        Ok(Self {
            m_dc_ref,
            m_ac_ref,
            rd_predicted_dc: meta.rd_predicted_dc,
            rd_predicted_ac: meta.rd_predicted_ac,
            ref_mua: meta.ref_mua,
            ref_musp: meta.ref_musp,
            wavelength: meta.wavelength_nm,
        })
    }

    pub fn meta(&self) -> CalibrationMeta {
        CalibrationMeta {
            rd_predicted_dc: self.rd_predicted_dc,
            rd_predicted_ac: self.rd_predicted_ac,
            ref_mua: self.ref_mua,
            ref_musp: self.ref_musp,
            wavelength_nm: self.wavelength,
        }
    }

    /// Checks that both reference amplitude images are strictly positive.
    pub fn ensure_positive(&self) -> Result<()> {
        first_non_positive(&self.m_dc_ref)
            .or_else(|| first_non_positive(&self.m_ac_ref))
            .map_or(Ok(()), |(x, y)| Err(Error::NonPositiveReference { x, y }))
    }
}

fn first_non_positive(img: &ScalarImage) -> Option<(usize, usize)> {
    img.data().iter().position(|&v| v <= 0.0).map(|i| (i % img.width(), i / img.width()))
}

/// Calibrated diffuse reflectance: `m / m_ref * rd_predicted` per pixel.
pub fn compute_diffuse_reflectance(m: &ScalarImage, m_ref: &ScalarImage, rd_predicted: f64) -> Result<ScalarImage> {
    m.ensure_same_dims(m_ref)?;
    if let Some((x, y)) = first_non_positive(m_ref) {
        return Err(Error::NonPositiveReference { x, y });
    }
    let data = m.data().iter().zip(m_ref.data()).map(|(&a, &r)| a / r * rd_predicted).collect();
    ScalarImage::new(m.width(), m.height(), m.pixel_pitch(), ImageKind::Reflectance, data)
}

/// Absorption and reduced-scattering maps with a per-pixel validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalPropertyMap {
    pub mua: ScalarImage,
    pub musp: ScalarImage,
    pub valid: Mask,
    pub profile_corrected: bool,
}

impl OpticalPropertyMap {
    pub fn new(mua: ScalarImage, musp: ScalarImage, valid: Mask, profile_corrected: bool) -> Result<Self> {
        mua.ensure_kind(ImageKind::Absorption)?;
        musp.ensure_kind(ImageKind::ReducedScattering)?;
        mua.ensure_same_dims(&musp)?;
        if valid.dims() != mua.dims() {
            return Err(Error::DimensionMismatch { expected: mua.dims(), found: valid.dims() });
        }
        Ok(Self { mua, musp, valid, profile_corrected })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mua.dims()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::DEFAULT_PIXEL_PITCH;

    fn amp(v: f64) -> ScalarImage {
        ScalarImage::filled(5, 4, DEFAULT_PIXEL_PITCH, ImageKind::Amplitude, v).unwrap()
    }

    #[test]
    fn identity_ratio() {
        let m = ScalarImage::from_fn(5, 4, 0.3, ImageKind::Amplitude, |x, y| 1.0 + (x * y) as f64).unwrap();
        let rd = compute_diffuse_reflectance(&m, &m, 0.5).unwrap();
        assert!(rd.data().iter().all(|&v| v == 0.5));
        assert_eq!(rd.kind(), ImageKind::Reflectance);
    }

    #[test]
    fn zero_input() {
        let rd = compute_diffuse_reflectance(&amp(0.0), &amp(2.0), 0.3).unwrap();
        assert!(rd.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_arithmetic() {
        let rd = compute_diffuse_reflectance(&amp(0.08), &amp(0.10), 0.45).unwrap();
        assert!(rd.data().iter().all(|&v| (v - 0.36).abs() < 1e-15));
    }

    #[test]
    fn errors() {
        let small = ScalarImage::filled(2, 2, 1.0, ImageKind::Amplitude, 1.0).unwrap();
        assert!(matches!(compute_diffuse_reflectance(&amp(1.0), &small, 0.5), Err(Error::DimensionMismatch { .. })));
        let mut data = alloc::vec![1.0; 20];
        data[7] = 0.0;
        let zero_ref = ScalarImage::new(5, 4, 1.0, ImageKind::Amplitude, data).unwrap();
        assert_eq!(
            compute_diffuse_reflectance(&amp(1.0), &zero_ref, 0.5),
            Err(Error::NonPositiveReference { x: 2, y: 1 })
        );
    }

    #[test]
    fn homogeneous_in_scale() {
        let m = ScalarImage::from_fn(5, 4, 0.3, ImageKind::Amplitude, |x, y| 0.1 + 0.01 * (x + y) as f64).unwrap();
        let r = ScalarImage::from_fn(5, 4, 0.3, ImageKind::Amplitude, |x, _| 0.2 + 0.02 * x as f64).unwrap();
        let base = compute_diffuse_reflectance(&m, &r, 0.4).unwrap();
        let k = 3.7;
        let scaled = compute_diffuse_reflectance(
            &m.map(ImageKind::Amplitude, |v| v * k).unwrap(),
            &r.map(ImageKind::Amplitude, |v| v * k).unwrap(),
            0.4,
        )
        .unwrap();
        for (a, b) in base.data().iter().zip(scaled.data()) {
            assert!((a - b).abs() <= 4.0 * f64::EPSILON * a.abs());
        }
    }

    #[test]
    fn calibration_set_validation() {
        let meta = CalibrationMeta {
            rd_predicted_dc: 0.4,
            rd_predicted_ac: 0.2,
            ref_mua: REFERENCE_MUA,
            ref_musp: REFERENCE_MUSP,
            wavelength_nm: REFERENCE_WAVELENGTH_NM,
        };
        assert!(CalibrationSet::new(amp(1.0), amp(0.5), meta).is_ok());
        let bad = CalibrationMeta { rd_predicted_ac: 1.0, ..meta };
        assert!(CalibrationSet::new(amp(1.0), amp(0.5), bad).is_err());
        let cal = CalibrationSet::new(amp(0.0), amp(0.5), meta).unwrap();
        assert!(matches!(cal.ensure_positive(), Err(Error::NonPositiveReference { .. })));
    }
}
