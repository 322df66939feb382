//! Paired-patch dataset on disk and CSV comparison reports.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sfdoptics_core::evalkit::{Comparison, PackingMode, PackingScales, PatchPair, StridePolicy};
use sfdoptics_core::{Mask, OpticalPropertyMap, ScalarImage};

use crate::error::{format_err, io_err, Result};
use crate::io::{ensure_dir, read_json, write_json, write_rgb};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub patch_size: usize,
    pub scales: PackingScales,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub mode: PackingMode,
    pub scene: String,
    pub index: usize,
    /// Paths relative to the dataset root.
    pub input: String,
    pub target: String,
    /// Top-left `(row, col)` of the patch in the source frame.
    pub origin: (usize, usize),
    pub policy: StridePolicy,
}

impl Manifest {
    pub fn new(patch_size: usize, scales: PackingScales) -> Self {
        Self { version: MANIFEST_VERSION, patch_size, scales, entries: Vec::new() }
    }

    /// Loads `<root>/manifest.json`, or starts an empty manifest.
    pub fn open(root: &Path, patch_size: usize, scales: PackingScales) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(patch_size, scales));
        }
        let m: Manifest = read_json(&path)?;
        if m.version != MANIFEST_VERSION {
            return Err(format_err(&path, format!("unsupported manifest version {}", m.version)));
        }
        if m.patch_size != patch_size || m.scales != scales {
            return Err(format_err(&path, "existing dataset uses a different patch size or packing scales"));
        }
        Ok(m)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        write_json(&root.join(MANIFEST_FILE), self)
    }
}

/// Writes `<root>/<mode>/{input,target}/<scene>_<index>.png` for each pair
/// and records them in the manifest, replacing earlier entries of the same
/// scene and mode.
pub fn write_patches(
    root: &Path,
    manifest: &mut Manifest,
    scene: &str,
    pairs: &[PatchPair],
    policy: StridePolicy,
) -> Result<()> {
    if scene.is_empty() || scene.contains(['/', '\\']) {
        return Err(format_err(root, format!("invalid scene name {scene:?}")));
    }
    for pair in pairs {
        if pair.size != manifest.patch_size {
            return Err(format_err(root, "patch size differs from the manifest"));
        }
    }
    if let Some(mode) = pairs.first().map(|p| p.mode) {
        manifest.entries.retain(|e| !(e.scene == scene && e.mode == mode));
    }
    for (index, pair) in pairs.iter().enumerate() {
        let mode = pair.mode.name();
        let file = format!("{scene}_{index}.png");
        let rel = |side: &str| format!("{mode}/{side}/{file}");
        for (side, rgb) in [("input", &pair.input_rgb), ("target", &pair.target_rgb)] {
            let dir = root.join(mode).join(side);
            ensure_dir(&dir)?;
            write_rgb(&dir.join(&file), pair.size, pair.size, rgb)?;
        }
        manifest.entries.push(ManifestEntry {
            mode: pair.mode,
            scene: scene.into(),
            index,
            input: rel("input"),
            target: rel("target"),
            origin: pair.origin,
            policy,
        });
    }
    Ok(())
}

/// The `width × height` window of a map whose top-left pixel is
/// `(row, col)`, matching a patch's manifest origin.
pub fn crop_op_map(
    op: &OpticalPropertyMap,
    (row, col): (usize, usize),
    width: usize,
    height: usize,
) -> Result<OpticalPropertyMap> {
    let (w, h) = op.dims();
    if col + width > w || row + height > h {
        return Err(sfdoptics_core::Error::OutOfBounds.into());
    }
    let crop = |img: &ScalarImage| {
        ScalarImage::from_fn(width, height, img.pixel_pitch(), img.kind(), |x, y| img.get(col + x, row + y))
    };
    let valid = Mask::from_fn(width, height, |x, y| op.valid.get(col + x, row + y));
    Ok(OpticalPropertyMap::new(crop(&op.mua)?, crop(&op.musp)?, valid, op.profile_corrected)?)
}

/// One line of a comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scene: String,
    pub method: String,
    pub nmae_mua: f64,
    pub nmae_musp: f64,
    pub roi_mean_mua: f64,
    pub roi_mean_musp: f64,
    pub valid_fraction: f64,
}

impl ReportRow {
    pub fn new(scene: &str, method: &str, c: &Comparison) -> Self {
        Self {
            scene: scene.into(),
            method: method.into(),
            nmae_mua: c.nmae_mua,
            nmae_musp: c.nmae_musp,
            roi_mean_mua: c.roi_mean_mua,
            roi_mean_musp: c.roi_mean_musp,
            valid_fraction: c.valid_fraction,
        }
    }
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
