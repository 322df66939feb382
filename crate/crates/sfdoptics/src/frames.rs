//! Directory of named frames as written by `sfdoptics synth`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sfdoptics_core::{FrameSet, ScalarImage};

use crate::error::{format_err, Result};
use crate::io::{read_image, read_json, write_image, write_json};

pub const FRAMES_META: &str = "frames.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramesMeta {
    pub fx_ac: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fx_profilometry: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_height: Option<f64>,
}

/// Storage format of frame images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    Png16,
    Raw,
}

impl FrameFormat {
    fn ext(self) -> &'static str {
        match self {
            Self::Png16 => "png",
            Self::Raw => "f64",
        }
    }
}

/// Finds `<stem>.png` or `<stem>.f64` in `dir`.
pub fn find_frame(dir: &Path, stem: &str) -> Result<PathBuf> {
    ["png", "f64"]
        .iter()
        .map(|e| dir.join(format!("{stem}.{e}")))
        .find(|p| p.exists())
        .ok_or_else(|| format_err(dir, format!("missing frame {stem}.png or {stem}.f64")))
}

fn read_triple(dir: &Path, prefix: &str) -> Result<[ScalarImage; 3]> {
    let f = |k: usize| read_image(&find_frame(dir, &format!("{prefix}_{k}"))?);
    Ok([f(0)?, f(1)?, f(2)?])
}

pub fn write_frame(dir: &Path, stem: &str, img: &ScalarImage, format: FrameFormat) -> Result<()> {
    write_image(&dir.join(format!("{stem}.{}", format.ext())), img, None)
}

pub fn write_frameset(dir: &Path, frames: &FrameSet, meta: &FramesMeta, format: FrameFormat) -> Result<()> {
    for (prefix, set) in [("dc", &frames.dc_frames), ("ac", &frames.ac_frames)] {
        for (k, img) in set.iter().enumerate() {
            write_frame(dir, &format!("{prefix}_{k}"), img, format)?;
        }
    }
    write_json(&dir.join(FRAMES_META), meta)
}

pub fn read_meta(dir: &Path) -> Result<FramesMeta> {
    read_json(&dir.join(FRAMES_META))
}

pub fn read_frameset(dir: &Path) -> Result<FrameSet> {
    let meta = read_meta(dir)?;
    Ok(FrameSet::new(read_triple(dir, "dc")?, read_triple(dir, "ac")?, meta.fx_ac)?)
}

pub fn read_profilometry(dir: &Path) -> Result<[ScalarImage; 3]> {
    read_triple(dir, "prof")
}
