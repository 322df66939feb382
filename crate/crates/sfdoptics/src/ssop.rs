//! Single-snapshot optical properties: DC and AC amplitudes from one fringe
//! image by Fourier filtering along the modulation axis and a Hilbert
//! envelope, followed by table inversion.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use sfdoptics_core::calibration::{CalibrationSet, OpticalPropertyMap};
use sfdoptics_core::image::{ImageKind, Mask, ScalarImage};
use sfdoptics_core::{LookupTable, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowShape {
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModulationAxis {
    X,
}

/// How rows are extended before filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EdgeExtension {
    /// Transform the row as is (periodic wrap-around).
    None,
    /// Append the mirrored row.
    Mirror,
    /// Pad both ends with a least-squares fit of offset plus fringe over the
    /// outermost `fit` pixels, faded to a common level over `pad` pixels.
    FringeFit { pad: usize, fit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsopFilterConfig {
    /// Band removed from every row to leave the planar component, mm⁻¹.
    /// Its midpoint is taken as the fringe frequency.
    pub f_dc_stop: [f64; 2],
    /// Frequencies at or below this are removed before the envelope, mm⁻¹.
    pub f_ac_pass_low: f64,
    pub window_shape: WindowShape,
    pub modulation_axis: ModulationAxis,
    pub extension: EdgeExtension,
    /// Width of the frame border marked invalid, pixels.
    pub border: usize,
}

impl Default for SsopFilterConfig {
    fn default() -> Self {
        Self {
            f_dc_stop: [0.16, 0.24],
            f_ac_pass_low: 0.16,
            window_shape: WindowShape::Rectangular,
            modulation_axis: ModulationAxis::X,
            extension: EdgeExtension::FringeFit { pad: 128, fit: 36 },
            border: 16,
        }
    }
}

impl SsopFilterConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.f_dc_stop;
        if !(lo >= 0.0 && hi > lo && self.f_ac_pass_low >= 0.0) {
            return Err(sfdoptics_core::Error::InvalidConfig("SSOP cutoffs must be non-negative and ordered"));
        }
        if let EdgeExtension::FringeFit { fit, .. } = self.extension {
            if fit < 3 {
                return Err(sfdoptics_core::Error::InvalidConfig("fringe fit needs at least three pixels"));
            }
        }
        Ok(())
    }

    fn fringe_frequency(&self) -> f64 {
        0.5 * (self.f_dc_stop[0] + self.f_dc_stop[1])
    }
}

/// Full complex 2D spectrum, row-major, unnormalized forward transform.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrum {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
    pub data: Vec<Complex64>,
}

impl ComplexSpectrum {
    /// Signed spatial frequency of column `k`, mm⁻¹.
    pub fn fx(&self, k: usize) -> f64 {
        signed_frequency(k, self.width, self.pixel_pitch)
    }

    /// Signed spatial frequency of row `k`, mm⁻¹.
    pub fn fy(&self, k: usize) -> f64 {
        signed_frequency(k, self.height, self.pixel_pitch)
    }
}

fn signed_frequency(k: usize, n: usize, pitch: f64) -> f64 {
    let s = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    s / (n as f64 * pitch)
}

fn transform(data: &mut [Complex64], width: usize, height: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    row.process(data);
    let mut column = vec![Complex64::default(); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
    if inverse {
        let n = (width * height) as f64;
        data.iter_mut().for_each(|v| *v /= n);
    }
}

/// Forward 2D DFT of an image of any size.
pub fn fft2_forward(img: &ScalarImage) -> ComplexSpectrum {
    let (width, height) = img.dims();
    let mut data: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut data, width, height, false);
    ComplexSpectrum { width, height, pixel_pitch: img.pixel_pitch(), data }
}

/// Inverse 2D DFT; returns the real part.
pub fn fft2_inverse(spec: &ComplexSpectrum, kind: ImageKind) -> Result<ScalarImage> {
    let mut data = spec.data.clone();
    transform(&mut data, spec.width, spec.height, true);
    ScalarImage::new(spec.width, spec.height, spec.pixel_pitch, kind, data.into_iter().map(|v| v.re).collect())
}

/// Least-squares `(a, b, c)` of `a + b cos(kx) + c sin(kx)` over `xs`.
fn fit_fringe(values: &[f64], xs: impl Iterator<Item = f64>, k: f64) -> [f64; 3] {
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (x, &v) in xs.zip(values) {
        let basis = [1.0, (k * x).cos(), (k * x).sin()];
        for i in 0..3 {
            atb[i] += basis[i] * v;
            for j in 0..3 {
                ata[i][j] += basis[i] * basis[j];
            }
        }
    }
    solve3(ata, atb).unwrap_or([values.iter().sum::<f64>() / values.len() as f64, 0.0, 0.0])
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (v, p) in a[row].iter_mut().zip(pivot_row).skip(col) {
                *v -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        x[i] = (b[i] - (i + 1..3).map(|k| a[i][k] * x[k]).sum::<f64>()) / a[i][i];
    }
    Some(x)
}

/// Extends one row; returns the extended samples and the offset of the
/// original first sample.
fn extend_row(row: &[f64], pitch: f64, cfg: &SsopFilterConfig) -> (Vec<Complex64>, usize) {
    let w = row.len();
    let c = |v: f64| Complex64::new(v, 0.0);
    match cfg.extension {
        EdgeExtension::None => (row.iter().map(|&v| c(v)).collect(), 0),
        EdgeExtension::Mirror => (row.iter().chain(row.iter().rev()).map(|&v| c(v)).collect(), 0),
        EdgeExtension::FringeFit { pad, fit } => {
            let n = fit.min(w);
            let k = 2.0 * std::f64::consts::PI * cfg.fringe_frequency();
            let left = fit_fringe(&row[..n], (0..n).map(|i| i as f64 * pitch), k);
            let right = fit_fringe(&row[w - n..], (w - n..w).map(|i| i as f64 * pitch), k);
            let level = 0.5 * (left[0] + right[0]);
            let tail = |p: [f64; 3], x: f64, fade: f64| {
                level + fade * (p[0] - level) + fade * (p[1] * (k * x).cos() + p[2] * (k * x).sin())
            };
            let fade = |t: usize| 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / (pad + 1) as f64).cos());
            let mut out = Vec::with_capacity(w + 2 * pad);
            for t in (1..=pad).rev() {
                out.push(c(tail(left, -(t as f64) * pitch, fade(t))));
            }
            out.extend(row.iter().map(|&v| c(v)));
            for t in 1..=pad {
                out.push(c(tail(right, (w - 1 + t) as f64 * pitch, fade(t))));
            }
            (out, pad)
        }
    }
}

/// Applies a real gain that depends only on the signed x frequency to every
/// row, then maps the complex result back to a real image. A mask that is
/// constant along f_y makes this identical to filtering the 2D spectrum.
fn filter_rows(
    img: &ScalarImage,
    cfg: &SsopFilterConfig,
    gain: impl Fn(f64, usize, usize) -> f64,
    output: impl Fn(Complex64) -> f64,
    kind: ImageKind,
) -> Result<ScalarImage> {
    cfg.validate()?;
    let (w, h) = img.dims();
    let pitch = img.pixel_pitch();
    let mut planner = FftPlanner::new();
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let (mut buf, offset) = extend_row(img.row(y), pitch, cfg);
        let n = buf.len();
        planner.plan_fft_forward(n).process(&mut buf);
        for (k, v) in buf.iter_mut().enumerate() {
            *v *= gain(signed_frequency(k, n, pitch), k, n) / n as f64;
        }
        planner.plan_fft_inverse(n).process(&mut buf);
        data.extend(buf[offset..offset + w].iter().map(|&v| output(v)));
    }
    ScalarImage::new(w, h, pitch, kind, data)
}

/// Planar component: removes the fringe band `|f_x| ∈ f_dc_stop` from every
/// row and keeps the real part.
pub fn extract_dc(img: &ScalarImage, cfg: &SsopFilterConfig) -> Result<ScalarImage> {
    let [lo, hi] = cfg.f_dc_stop;
    let stop = |f: f64, _, _| if f.abs() >= lo && f.abs() <= hi { 0.0 } else { 1.0 };
    // Filter ringing can dip marginally below zero on dark frames.
    filter_rows(img, cfg, stop, |v| v.re.max(0.0), ImageKind::Amplitude)
}

/// Fringe envelope: high-pass `|f_x| > f_ac_pass_low`, then the modulus of
/// the row-wise analytic signal (negative frequencies dropped, positive
/// doubled).
pub fn extract_ac(img: &ScalarImage, cfg: &SsopFilterConfig) -> Result<ScalarImage> {
    let low = cfg.f_ac_pass_low;
    let analytic = |f: f64, k: usize, n: usize| {
        if f.abs() <= low || f < 0.0 {
            0.0
        } else if 2 * k == n {
            1.0
        } else {
            2.0
        }
    };
    filter_rows(img, cfg, analytic, |v| v.norm(), ImageKind::Amplitude)
}

/// Recovers optical properties from a single fringe image at the table's AC
/// frequency. A border band of `cfg.border` pixels is marked invalid.
pub fn process_ssop(
    img: &ScalarImage,
    cal: &CalibrationSet,
    lut: &LookupTable,
    cfg: &SsopFilterConfig,
) -> Result<OpticalPropertyMap> {
    img.ensure_kind(ImageKind::Intensity)?;
    img.ensure_same_dims(&cal.m_dc_ref)?;
    cal.ensure_positive()?;
    let m_dc = extract_dc(img, cfg)?;
    let m_ac = extract_ac(img, cfg)?;
    let (w, h) = img.dims();
    let interior = Mask::interior(w, h, cfg.border);
    let n = w * h;
    let (mut mua, mut musp, mut valid) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        let rd_dc = m_dc.data()[k] / cal.m_dc_ref.data()[k] * cal.rd_predicted_dc;
        let rd_ac = m_ac.data()[k] / cal.m_ac_ref.data()[k] * cal.rd_predicted_ac;
        let inv = lut.invert(rd_dc, rd_ac);
        mua.push(inv.mua);
        musp.push(inv.musp);
        valid.push(inv.valid && interior.data()[k]);
    }
    let pitch = img.pixel_pitch();
    OpticalPropertyMap::new(
        ScalarImage::new(w, h, pitch, ImageKind::Absorption, mua)?,
        ScalarImage::new(w, h, pitch, ImageKind::ReducedScattering, musp)?,
        Mask::new(w, h, valid)?,
        false,
    )
}
