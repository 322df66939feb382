//! Forward renderer for structured-illumination frames of synthetic scenes
//! with known optical properties.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::calibration::{OpticalPropertyMap, REFERENCE_MUA, REFERENCE_MUSP};
use crate::error::{Error, Result};
use crate::image::{ImageKind, Mask, ScalarImage, DEFAULT_PIXEL_PITCH};
use crate::lut::LookupTable;
use crate::rng;
use crate::sfdi::{self, FrameSet, HeightCalibration, HeightLevel, HeightMap, DEFAULT_FX_PROFILOMETRY, PHASES};

/// Default phase-to-height factor of the simulated projector, mm per radian.
pub const DEFAULT_K_HEIGHT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub mua: f64,
    pub musp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SceneKind {
    Homogeneous(Coefficients),
    /// Vertical step: columns left of `split · width` take `left`.
    TwoRegion {
        left: Coefficients,
        right: Coefficients,
        #[serde(default = "half")]
        split: f64,
    },
    /// Background with Gaussian inclusions that scale both coefficients.
    GaussianBlobs {
        background: Coefficients,
        count: usize,
        sigma_mm: f64,
        /// Peak relative change of μa and μs′; inclusions pick a random
        /// fraction of it between 0.5 and 1.
        mua_contrast: f64,
        musp_contrast: f64,
        seed: u64,
    },
    /// Log-linear ramp along x from `start` to `end`.
    LinearGradient {
        start: Coefficients,
        end: Coefficients,
    },
    /// Homogeneous slab tilted about the y axis.
    TiltedPlane {
        coefficients: Coefficients,
        tilt_deg: f64,
    },
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_pitch")]
    pub pixel_pitch: f64,
    pub kind: SceneKind,
    /// Uniform elevation above the calibration plane, mm.
    #[serde(default)]
    pub elevation_mm: f64,
}

fn default_pitch() -> f64 {
    DEFAULT_PIXEL_PITCH
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    pub op: OpticalPropertyMap,
    pub height: Option<HeightMap>,
}

impl SceneSpec {
    pub fn homogeneous(name: &str, width: usize, height: usize, mua: f64, musp: f64) -> Self {
        Self {
            name: name.into(),
            width,
            height,
            pixel_pitch: DEFAULT_PIXEL_PITCH,
            kind: SceneKind::Homogeneous(Coefficients { mua, musp }),
            elevation_mm: 0.0,
        }
    }

    pub fn reference_phantom(width: usize, height: usize) -> Self {
        Self::homogeneous("reference", width, height, REFERENCE_MUA, REFERENCE_MUSP)
    }
}

/// Builds the ground-truth maps of a scene, rejecting coefficients outside
/// the table.
pub fn make_scene(spec: &SceneSpec, lut: &LookupTable) -> Result<Scene> {
    let (w, h, pitch) = (spec.width, spec.height, spec.pixel_pitch);
    if w == 0 || h == 0 {
        return Err(Error::InvalidConfig("scene must have at least one pixel"));
    }
    let field: Vec<(f64, f64)> = match &spec.kind {
        SceneKind::Homogeneous(c) => alloc::vec![(c.mua, c.musp); w * h],
        SceneKind::TwoRegion { left, right, split } => {
            if !(0.0..=1.0).contains(split) {
                return Err(Error::InvalidConfig("split must lie in [0, 1]"));
            }
            let edge = libm::round(split * w as f64) as usize;
            grid(w, h, |x, _| if x < edge { (left.mua, left.musp) } else { (right.mua, right.musp) })
        }
        SceneKind::GaussianBlobs { background, count, sigma_mm, mua_contrast, musp_contrast, seed } => {
            if !(*sigma_mm > 0.0) {
                return Err(Error::InvalidConfig("blob sigma must be positive"));
            }
            let mut rng = rng::stream(*seed, 0);
            let blobs: Vec<[f64; 4]> = (0..*count)
                .map(|_| {
                    let cx = rng.random::<f64>() * w as f64 * pitch;
                    let cy = rng.random::<f64>() * h as f64 * pitch;
                    let a = mua_contrast * rng.random_range(0.5..=1.0);
                    let s = musp_contrast * rng.random_range(0.5..=1.0);
                    [cx, cy, a, s]
                })
                .collect();
            grid(w, h, |x, y| {
                let (px, py) = (x as f64 * pitch, y as f64 * pitch);
                let (mut fa, mut fs) = (1.0, 1.0);
                for &[cx, cy, a, s] in &blobs {
                    let r2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
                    let g = libm::exp(-r2 / (2.0 * sigma_mm * sigma_mm));
                    fa += a * g;
                    fs += s * g;
                }
                (background.mua * fa, background.musp * fs)
            })
        }
        SceneKind::LinearGradient { start, end } => grid(w, h, |x, _| {
            let t = if w > 1 { x as f64 / (w - 1) as f64 } else { 0.0 };
            let lerp = |a: f64, b: f64| libm::exp(libm::log(a) + t * (libm::log(b) - libm::log(a)));
            (lerp(start.mua, end.mua), lerp(start.musp, end.musp))
        }),
        SceneKind::TiltedPlane { coefficients, .. } => {
            alloc::vec![(coefficients.mua, coefficients.musp); w * h]
        }
    };
    for &(mua, musp) in &field {
        if !lut.contains(mua, musp) {
            return Err(Error::OutOfGrid { mua, musp });
        }
    }
    let mua = field.iter().map(|p| p.0).collect();
    let musp = field.iter().map(|p| p.1).collect();
    let op = OpticalPropertyMap::new(
        ScalarImage::new(w, h, pitch, ImageKind::Absorption, mua)?,
        ScalarImage::new(w, h, pitch, ImageKind::ReducedScattering, musp)?,
        Mask::filled(w, h, true),
        false,
    )?;
    let tilt = match spec.kind {
        SceneKind::TiltedPlane { tilt_deg, .. } => tilt_deg,
        _ => 0.0,
    };
    if !(0.0..90.0).contains(&tilt.abs()) {
        return Err(Error::InvalidConfig("tilt must lie in (-90, 90) degrees"));
    }
    let height = if tilt != 0.0 || spec.elevation_mm != 0.0 {
        let slope = libm::tan(tilt.to_radians());
        Some(HeightMap {
            height: ScalarImage::from_fn(w, h, pitch, ImageKind::Height, |x, _| {
                spec.elevation_mm + slope * x as f64 * pitch
            })?,
            surface_normal_angle: ScalarImage::filled(w, h, pitch, ImageKind::Phase, libm::atan(slope.abs()))?,
            flagged_rows: Vec::new(),
        })
    } else {
        None
    };
    Ok(Scene { name: spec.name.clone(), op, height })
}

fn grid(w: usize, h: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            out.push(f(x, y));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraModel {
    /// Source intensity S₀ in counts.
    pub source_intensity: f64,
    pub read_noise_sigma: f64,
    pub shot_noise: bool,
    /// 0 disables quantization; otherwise 8 or 16.
    pub quantization_bits: u32,
    /// Change of source intensity per mm of elevation, counts/mm.
    pub height_falloff: f64,
    pub noise_seed: u64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            source_intensity: 30000.0,
            read_noise_sigma: 0.0,
            shot_noise: true,
            quantization_bits: 16,
            height_falloff: 0.0,
            noise_seed: 1,
        }
    }
}

impl CameraModel {
    /// Default intensity with every noise source and quantization off.
    pub fn noiseless() -> Self {
        Self { shot_noise: false, quantization_bits: 0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.source_intensity > 0.0) || !self.source_intensity.is_finite() {
            return Err(Error::InvalidConfig("source intensity must be positive"));
        }
        if !(self.read_noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("read noise sigma must be non-negative"));
        }
        if !matches!(self.quantization_bits, 0 | 8 | 16) {
            return Err(Error::InvalidConfig("quantization bits must be 0, 8 or 16"));
        }
        if !self.height_falloff.is_finite() {
            return Err(Error::InvalidConfig("height falloff must be finite"));
        }
        Ok(())
    }

    fn source_at(&self, h: f64) -> f64 {
        self.source_intensity + self.height_falloff * h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IlluminationSpec {
    pub fx: f64,
    pub phase: f64,
    pub modulation_depth: f64,
}

impl IlluminationSpec {
    pub fn new(fx: f64, phase: f64) -> Self {
        Self { fx, phase, modulation_depth: 1.0 }
    }
}

/// Reflectance maps of a scene at DC and at the table's AC frequency.
struct ReflectanceField {
    dc: Vec<f64>,
    ac: Vec<f64>,
}

fn reflectance_field(scene: &Scene, lut: &LookupTable) -> Result<ReflectanceField> {
    let mut dc = Vec::with_capacity(scene.op.mua.data().len());
    let mut ac = Vec::with_capacity(dc.capacity());
    for (&mua, &musp) in scene.op.mua.data().iter().zip(scene.op.musp.data()) {
        let (d, a) = lut.forward(mua, musp)?;
        dc.push(d);
        ac.push(a);
    }
    Ok(ReflectanceField { dc, ac })
}

/// Shared per-pixel fringe equation; `phase_shift` adds a per-pixel phase
/// term (used for height in profilometry).
fn render_with(
    scene: &Scene,
    field: &ReflectanceField,
    illum: IlluminationSpec,
    modulated: &[f64],
    cam: &CameraModel,
    frame_id: u64,
    phase_shift: impl Fn(usize) -> f64,
) -> Result<ScalarImage> {
    cam.validate()?;
    let (w, h) = scene.op.dims();
    let pitch = scene.op.mua.pixel_pitch();
    let heights = scene.height.as_ref().map(|hm| hm.height.data());
    let angles = scene.height.as_ref().map(|hm| hm.surface_normal_angle.data());
    let max = match cam.quantization_bits {
        0 => f64::INFINITY,
        bits => ((1u64 << bits) - 1) as f64,
    };
    let read = Normal::new(0.0, cam.read_noise_sigma).map_err(|_| Error::InvalidConfig("read noise"))?;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let mut rng = rng::stream(cam.noise_seed, (frame_id << 32) | y as u64);
        for x in 0..w {
            let k = y * w + x;
            let elevation = heights.map_or(0.0, |v| v[k]);
            let cos = angles.map_or(1.0, |v| libm::cos(v[k]));
            let arg = 2.0 * PI * illum.fx * x as f64 * pitch + illum.phase + phase_shift(k);
            let mut v = cam.source_at(elevation) / 2.0
                * cos
                * (field.dc[k] + illum.modulation_depth * modulated[k] * libm::cos(arg));
            if cam.shot_noise && v > 0.0 {
                v = Poisson::new(v).map_err(|_| Error::InvalidConfig("shot noise rate"))?.sample(&mut rng);
            }
            if cam.read_noise_sigma > 0.0 {
                v += read.sample(&mut rng);
            }
            v = v.max(0.0);
            if cam.quantization_bits != 0 {
                v = libm::round(v).min(max);
            }
            data.push(v);
        }
    }
    ScalarImage::new(w, h, pitch, ImageKind::Intensity, data)
}

fn modulated_for<'a>(field: &'a ReflectanceField, fx: f64, lut: &LookupTable) -> Result<&'a [f64]> {
    if fx == 0.0 {
        Ok(&field.dc)
    } else if fx == lut.fx_ac() {
        Ok(&field.ac)
    } else {
        Err(Error::InvalidConfig("render frequency must be 0 or the table's AC frequency"))
    }
}

/// One structured-illumination frame. `frame_id` selects the noise streams.
pub fn render_frame(
    scene: &Scene,
    illum: IlluminationSpec,
    lut: &LookupTable,
    cam: &CameraModel,
    frame_id: u64,
) -> Result<ScalarImage> {
    let field = reflectance_field(scene, lut)?;
    render_with(scene, &field, illum, modulated_for(&field, illum.fx, lut)?, cam, frame_id, |_| 0.0)
}

/// Three DC and three AC frames at the standard phase offsets.
pub fn render_frameset(scene: &Scene, lut: &LookupTable, cam: &CameraModel) -> Result<FrameSet> {
    let field = reflectance_field(scene, lut)?;
    let fx = lut.fx_ac();
    let frame = |f: f64, i: usize, id: u64| {
        render_with(scene, &field, IlluminationSpec::new(f, PHASES[i]), modulated_for(&field, f, lut)?, cam, id, |_| {
            0.0
        })
    };
    let dc = [frame(0.0, 0, 0)?, frame(0.0, 1, 1)?, frame(0.0, 2, 2)?];
    let ac = [frame(fx, 0, 3)?, frame(fx, 1, 4)?, frame(fx, 2, 5)?];
    FrameSet::new(dc, ac, fx)
}

/// Single-phase snapshot at the table's AC frequency.
pub fn render_snapshot(scene: &Scene, lut: &LookupTable, cam: &CameraModel) -> Result<ScalarImage> {
    render_frame(scene, IlluminationSpec::new(lut.fx_ac(), 0.0), lut, cam, 9)
}

/// Three profilometry frames; elevation shifts the fringe phase by
/// `h / k_height`. Fringe contrast uses the AC reflectance map as a proxy,
/// which affects only the modulation depth, not the recovered phase.
pub fn render_profilometry(
    scene: &Scene,
    lut: &LookupTable,
    cam: &CameraModel,
    fx: f64,
    k_height: f64,
) -> Result<[ScalarImage; 3]> {
    if !(k_height > 0.0) || !(fx > 0.0) {
        return Err(Error::InvalidConfig("profilometry frequency and k_height must be positive"));
    }
    let field = reflectance_field(scene, lut)?;
    let heights = scene.height.as_ref().map(|hm| hm.height.data());
    let shift = |k: usize| heights.map_or(0.0, |v| v[k] / k_height);
    let frame = |i: usize| {
        render_with(scene, &field, IlluminationSpec::new(fx, PHASES[i]), &field.ac, cam, 6 + i as u64, shift)
    };
    Ok([frame(0)?, frame(1)?, frame(2)?])
}

/// Height calibration from the reference phantom imaged at each of
/// `heights` (mm) plus a flat profilometry reference at zero elevation.
pub fn height_calibration(
    lut: &LookupTable,
    cam: &CameraModel,
    width: usize,
    height: usize,
    heights: &[f64],
    k_height: f64,
) -> Result<HeightCalibration> {
    let mut spec = SceneSpec::reference_phantom(width, height);
    let flat = make_scene(&spec, lut)?;
    let prof = render_profilometry(&flat, lut, cam, DEFAULT_FX_PROFILOMETRY, k_height)?;
    let reference_phase = sfdi::profilometry_phase(&prof[0], &prof[1], &prof[2])?.phase;
    let mut levels = Vec::with_capacity(heights.len());
    for &h in heights {
        spec.elevation_mm = h;
        let frames = render_frameset(&make_scene(&spec, lut)?, lut, cam)?;
        let [a1, a2, a3] = &frames.ac_frames;
        levels.push(HeightLevel {
            height: h,
            m_dc: sfdi::demodulate_dc(&frames.dc_frames)?,
            m_ac: sfdi::demodulate_ac(a1, a2, a3)?,
        });
    }
    HeightCalibration::new(k_height, DEFAULT_FX_PROFILOMETRY, reference_phase, levels)
}
