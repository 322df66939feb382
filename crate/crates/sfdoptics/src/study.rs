//! Homogeneous phantom study: SFDI and SSOP against known coefficients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sfdoptics_core::calibration::{REFERENCE_MUA, REFERENCE_MUSP};
use sfdoptics_core::evalkit::{compare_report, Roi};
use sfdoptics_core::synth::{make_scene, render_frameset, render_snapshot, CameraModel, SceneSpec};
use sfdoptics_core::{calibrate_from_phantom, process_sfdi, CalibrationSet, LookupTable};

use crate::dataset::ReportRow;
use crate::error::Result;
use crate::ssop::{process_ssop, SsopFilterConfig};

pub const STUDY_MUA: [f64; 3] = [0.02, 0.055, 0.15];
pub const STUDY_MUSP: [f64; 6] = [0.1, 0.2, 0.4, 0.7, 1.0, 1.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub width: usize,
    pub height: usize,
    /// Side of the centred square ROI the metrics use.
    pub roi_side: usize,
    pub camera: CameraModel,
    pub ssop: SsopFilterConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            width: 192,
            height: 192,
            roi_side: 100,
            camera: CameraModel::default(),
            ssop: SsopFilterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phantom {
    pub mua: f64,
    pub musp: f64,
}

impl Phantom {
    pub fn name(&self) -> String {
        format!("phantom_mua{:.3}_musp{:.2}", self.mua, self.musp)
    }
}

/// The 18 homogeneous phantoms, μa-major.
pub fn phantom_set() -> Vec<Phantom> {
    STUDY_MUA.iter().flat_map(|&mua| STUDY_MUSP.iter().map(move |&musp| Phantom { mua, musp })).collect()
}

/// Camera for the `index`-th scene of a run; every scene gets its own noise
/// realization.
fn camera_for(cam: &CameraModel, index: usize) -> CameraModel {
    CameraModel { noise_seed: cam.noise_seed ^ ((index as u64 + 1) << 40), ..*cam }
}

/// Calibrates against the reference phantom imaged with the study camera.
pub fn study_calibration(lut: &LookupTable, cfg: &StudyConfig) -> Result<CalibrationSet> {
    let spec = SceneSpec::reference_phantom(cfg.width, cfg.height);
    let frames = render_frameset(&make_scene(&spec, lut)?, lut, &cfg.camera)?;
    Ok(calibrate_from_phantom(&frames, lut, REFERENCE_MUA, REFERENCE_MUSP)?)
}

/// Runs both methods on every phantom. Rows come in phantom order, SFDI
/// before SSOP, independent of the thread pool size.
pub fn run_phantom_study(lut: &LookupTable, phantoms: &[Phantom], cfg: &StudyConfig) -> Result<Vec<ReportRow>> {
    cfg.camera.validate()?;
    cfg.ssop.validate()?;
    let cal = study_calibration(lut, cfg)?;
    let mask = Roi::centered(cfg.width, cfg.height, cfg.roi_side).mask(cfg.width, cfg.height);
    let per_phantom = phantoms
        .par_iter()
        .enumerate()
        .map(|(i, p)| -> Result<[ReportRow; 2]> {
            let name = p.name();
            let spec = SceneSpec::homogeneous(&name, cfg.width, cfg.height, p.mua, p.musp);
            let scene = make_scene(&spec, lut)?;
            let cam = camera_for(&cfg.camera, i);
            let frames = render_frameset(&scene, lut, &cam)?;
            let sfdi = process_sfdi(&frames, &cal, lut)?;
            let snapshot = render_snapshot(&scene, lut, &cam)?;
            let ssop = process_ssop(&snapshot, &cal, lut, &cfg.ssop)?;
            Ok([
                ReportRow::new(&name, "sfdi", &compare_report(&sfdi, &scene.op, &mask)?),
                ReportRow::new(&name, "ssop", &compare_report(&ssop, &scene.op, &mask)?),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_phantom.into_iter().flatten().collect())
}
