//! On-disk formats: scalar images, masks, RGB patches, lookup tables,
//! calibration sets and optical property maps.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use serde::{Deserialize, Serialize};
use sfdoptics_core::calibration::CalibrationMeta;
use sfdoptics_core::image::DEFAULT_PIXEL_PITCH;
use sfdoptics_core::lut::LUT_FORMAT_VERSION;
use sfdoptics_core::sfdi::{HeightCalibration, HeightLevel};
use sfdoptics_core::{CalibrationSet, ImageKind, LookupTable, LutProvenance, Mask, OpticalPropertyMap, ScalarImage};

use crate::error::{format_err, io_err, Error, Result};

const PNG16_MAX: f64 = 65535.0;
const LUT_MAGIC: &[u8; 6] = b"SFLUT1";

/// Metadata stored next to every scalar image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub width: usize,
    pub height: usize,
    pub pixel_pitch_mm: f64,
    pub kind: ImageKind,
    /// Physical value of one PNG count; 1 for raw files.
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_nm: Option<f64>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Writes `.png` as 16-bit grayscale or `.f64` as raw little-endian
/// doubles, each with a JSON sidecar.
pub fn write_image(path: &Path, img: &ScalarImage, wavelength_nm: Option<f64>) -> Result<()> {
    let (w, h) = img.dims();
    let mut sidecar =
        Sidecar { width: w, height: h, pixel_pitch_mm: img.pixel_pitch(), kind: img.kind(), scale: 1.0, wavelength_nm };
    match extension(path).as_str() {
        "png" => {
            let data = img.data();
            if data.iter().any(|v| !(*v >= 0.0)) {
                return Err(format_err(path, "negative or non-finite values need the .f64 format"));
            }
            let integral = data.iter().all(|&v| v.fract() == 0.0 && v <= PNG16_MAX);
            if !integral {
                let max = data.iter().cloned().fold(0.0, f64::max);
                sidecar.scale = if max > 0.0 { max / PNG16_MAX } else { 1.0 };
            }
            let counts: Vec<u16> = data.iter().map(|&v| (v / sidecar.scale).round() as u16).collect();
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_raw(w as u32, h as u32, counts).expect("buffer matches dimensions");
            buf.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
        }
        "f64" => {
            let bytes: Vec<u8> = img.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(path, bytes).map_err(io_err(path))?;
        }
        other => return Err(format_err(path, format!("unsupported image extension {other:?}"))),
    }
    write_json(&sidecar_path(path), &sidecar)
}

/// Reads an image written by [`write_image`]. A PNG without sidecar is read
/// as raw intensity counts at the default pixel pitch.
pub fn read_image(path: &Path) -> Result<ScalarImage> {
    let side = sidecar_path(path);
    let sidecar: Option<Sidecar> = if side.exists() { Some(read_json(&side)?) } else { None };
    match extension(path).as_str() {
        "png" => {
            let img =
                image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?.into_luma16();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let (pitch, kind, scale) = match sidecar {
                Some(s) => {
                    if (s.width, s.height) != (w, h) {
                        return Err(format_err(path, "sidecar dimensions differ from the PNG"));
                    }
                    (s.pixel_pitch_mm, s.kind, s.scale)
                }
                None => (DEFAULT_PIXEL_PITCH, ImageKind::Intensity, 1.0),
            };
            let data = img.into_raw().into_iter().map(|c| c as f64 * scale).collect();
            Ok(ScalarImage::new(w, h, pitch, kind, data)?)
        }
        "f64" => {
            let s = sidecar.ok_or_else(|| format_err(path, "raw image is missing its JSON sidecar"))?;
            let bytes = fs::read(path).map_err(io_err(path))?;
            if bytes.len() != s.width * s.height * 8 {
                return Err(format_err(path, "raw image size differs from sidecar dimensions"));
            }
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
            Ok(ScalarImage::new(s.width, s.height, s.pixel_pitch_mm, s.kind, data)?)
        }
        other => Err(format_err(path, format!("unsupported image extension {other:?}"))),
    }
}

/// 8-bit PNG, 255 for selected pixels.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let (w, h) = mask.dims();
    let bytes = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(w as u32, h as u32, bytes).expect("buffer matches dimensions");
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Mask::new(w, h, img.into_raw().into_iter().map(|v| v >= 128).collect())?)
}

pub fn write_rgb(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let img = RgbImage::from_raw(width as u32, height as u32, rgb.to_vec())
        .ok_or_else(|| format_err(path, "RGB buffer length differs from width x height x 3"))?;
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Returns `(width, height, interleaved RGB bytes)`.
pub fn read_rgb(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?.into_rgb8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LutJson {
    version: u32,
    fx_ac: f64,
    provenance: LutProvenance,
    mua_grid: Vec<f64>,
    musp_grid: Vec<f64>,
    rd_dc: Vec<f64>,
    rd_ac: Vec<f64>,
}

fn lut_json(lut: &LookupTable) -> LutJson {
    LutJson {
        version: lut.version(),
        fx_ac: lut.fx_ac(),
        provenance: lut.provenance(),
        mua_grid: lut.mua_grid().to_vec(),
        musp_grid: lut.musp_grid().to_vec(),
        rd_dc: lut.rd_dc().to_vec(),
        rd_ac: lut.rd_ac().to_vec(),
    }
}

fn lut_from_json(path: &Path, j: LutJson) -> Result<LookupTable> {
    if j.version != LUT_FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported table version {}", j.version)));
    }
    Ok(LookupTable::from_parts(j.mua_grid, j.musp_grid, j.rd_dc, j.rd_ac, j.fx_ac, j.provenance)?)
}

fn lut_binary(lut: &LookupTable) -> Vec<u8> {
    let p = lut.provenance();
    let mut out = Vec::new();
    out.extend_from_slice(LUT_MAGIC);
    out.extend(lut.version().to_le_bytes());
    out.extend((lut.mua_grid().len() as u32).to_le_bytes());
    out.extend((lut.musp_grid().len() as u32).to_le_bytes());
    for v in [lut.fx_ac(), p.g, p.n_medium] {
        out.extend(v.to_le_bytes());
    }
    out.extend(p.seed.to_le_bytes());
    out.extend(p.photon_count.to_le_bytes());
    for arr in [lut.mua_grid(), lut.musp_grid(), lut.rd_dc(), lut.rd_ac()] {
        out.extend(arr.iter().flat_map(|v| v.to_le_bytes()));
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let s = self.bytes.get(self.pos..self.pos + N)?;
        self.pos += N;
        s.try_into().ok()
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        (0..n).map(|_| self.take().map(f64::from_le_bytes)).collect()
    }
}

fn lut_from_binary(path: &Path, bytes: &[u8]) -> Result<LookupTable> {
    let bad = || format_err(path, "truncated or malformed lookup table");
    let mut c = Cursor { bytes, pos: 0 };
    if c.take::<6>().as_ref() != Some(LUT_MAGIC) {
        return Err(format_err(path, "not a lookup table file"));
    }
    let version = u32::from_le_bytes(c.take().ok_or_else(bad)?);
    if version != LUT_FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported table version {version}")));
    }
    let ni = u32::from_le_bytes(c.take().ok_or_else(bad)?) as usize;
    let nj = u32::from_le_bytes(c.take().ok_or_else(bad)?) as usize;
    let head = c.f64s(3).ok_or_else(bad)?;
    let seed = u64::from_le_bytes(c.take().ok_or_else(bad)?);
    let photon_count = u64::from_le_bytes(c.take().ok_or_else(bad)?);
    let mua_grid = c.f64s(ni).ok_or_else(bad)?;
    let musp_grid = c.f64s(nj).ok_or_else(bad)?;
    let rd_dc = c.f64s(ni * nj).ok_or_else(bad)?;
    let rd_ac = c.f64s(ni * nj).ok_or_else(bad)?;
    if c.pos != bytes.len() {
        return Err(format_err(path, "trailing bytes after lookup table"));
    }
    let provenance = LutProvenance { g: head[1], n_medium: head[2], seed, photon_count };
    Ok(LookupTable::from_parts(mua_grid, musp_grid, rd_dc, rd_ac, head[0], provenance)?)
}

/// Saves a table. A `.json` path writes JSON only; any other path writes the
/// binary format plus a JSON twin next to it.
pub fn save_lut(path: &Path, lut: &LookupTable) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    if extension(path) == "json" {
        return write_json(path, &lut_json(lut));
    }
    fs::write(path, lut_binary(lut)).map_err(io_err(path))?;
    write_json(&path.with_extension("json"), &lut_json(lut))
}

/// Loads a table, choosing the format by extension.
pub fn load_lut(path: &Path) -> Result<LookupTable> {
    if extension(path) == "json" {
        return lut_from_json(path, read_json(path)?);
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    lut_from_binary(path, &bytes)
}

const CAL_META: &str = "calibration.json";

pub fn save_calibration(dir: &Path, cal: &CalibrationSet) -> Result<()> {
    ensure_dir(dir)?;
    let wl = Some(cal.wavelength);
    write_image(&dir.join("m_dc_ref.f64"), &cal.m_dc_ref, wl)?;
    write_image(&dir.join("m_ac_ref.f64"), &cal.m_ac_ref, wl)?;
    write_json(&dir.join(CAL_META), &cal.meta())
}

pub fn load_calibration(dir: &Path) -> Result<CalibrationSet> {
    let meta: CalibrationMeta = read_json(&dir.join(CAL_META))?;
    let dc = read_image(&dir.join("m_dc_ref.f64"))?;
    let ac = read_image(&dir.join("m_ac_ref.f64"))?;
    Ok(CalibrationSet::new(dc, ac, meta)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeightCalJson {
    k_height: f64,
    fx_profilometry: f64,
    reference_phase: String,
    levels: Vec<HeightLevelJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeightLevelJson {
    height_mm: f64,
    m_dc: String,
    m_ac: String,
}

const HEIGHT_META: &str = "height_calibration.json";

pub fn save_height_calibration(dir: &Path, hc: &HeightCalibration) -> Result<()> {
    ensure_dir(dir)?;
    write_image(&dir.join("reference_phase.f64"), &hc.reference_phase, None)?;
    let mut levels = Vec::new();
    for (i, l) in hc.levels.iter().enumerate() {
        let (dc, ac) = (format!("level_{i}_m_dc.f64"), format!("level_{i}_m_ac.f64"));
        write_image(&dir.join(&dc), &l.m_dc, None)?;
        write_image(&dir.join(&ac), &l.m_ac, None)?;
        levels.push(HeightLevelJson { height_mm: l.height, m_dc: dc, m_ac: ac });
    }
    let meta = HeightCalJson {
        k_height: hc.k_height,
        fx_profilometry: hc.fx_profilometry,
        reference_phase: "reference_phase.f64".into(),
        levels,
    };
    write_json(&dir.join(HEIGHT_META), &meta)
}

pub fn load_height_calibration(dir: &Path) -> Result<HeightCalibration> {
    let meta: HeightCalJson = read_json(&dir.join(HEIGHT_META))?;
    let reference_phase = read_image(&dir.join(&meta.reference_phase))?;
    let levels = meta
        .levels
        .iter()
        .map(|l| {
            Ok(HeightLevel {
                height: l.height_mm,
                m_dc: read_image(&dir.join(&l.m_dc))?,
                m_ac: read_image(&dir.join(&l.m_ac))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HeightCalibration::new(meta.k_height, meta.fx_profilometry, reference_phase, levels)?)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpMapMeta {
    profile_corrected: bool,
}

/// Writes `mua.f64`, `musp.f64`, `valid.png` and `op.json`.
pub fn save_op_map(dir: &Path, op: &OpticalPropertyMap) -> Result<()> {
    ensure_dir(dir)?;
    write_image(&dir.join("mua.f64"), &op.mua, None)?;
    write_image(&dir.join("musp.f64"), &op.musp, None)?;
    write_mask(&dir.join("valid.png"), &op.valid)?;
    write_json(&dir.join("op.json"), &OpMapMeta { profile_corrected: op.profile_corrected })
}

pub fn load_op_map(dir: &Path) -> Result<OpticalPropertyMap> {
    let meta: OpMapMeta = read_json(&dir.join("op.json"))?;
    let mua = read_image(&dir.join("mua.f64"))?;
    let musp = read_image(&dir.join("musp.f64"))?;
    let valid = read_mask(&dir.join("valid.png"))?;
    Ok(OpticalPropertyMap::new(mua, musp, valid, meta.profile_corrected)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sfdoptics_core::lut::log_grid;

    fn table() -> LookupTable {
        let mua = log_grid(0.01, 0.5, 4);
        let musp = log_grid(0.1, 2.0, 3);
        let mut dc = Vec::new();
        let mut ac = Vec::new();
        for (i, _) in mua.iter().enumerate() {
            for j in 0..3 {
                let d = 0.6 / (1.0 + i as f64) + 0.01 * j as f64;
                dc.push(d);
                ac.push(d * 0.5);
            }
        }
        let prov = LutProvenance { g: 0.9, n_medium: 1.4, seed: 7, photon_count: 1000 };
        LookupTable::from_parts(mua, musp, dc, ac, 0.2, prov).unwrap()
    }

    #[test]
    fn png_counts_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let img = ScalarImage::from_fn(5, 4, 0.3, ImageKind::Intensity, |x, y| (x * 1000 + y) as f64).unwrap();
        let p = dir.path().join("a.png");
        write_image(&p, &img, Some(660.0)).unwrap();
        let s: Sidecar = read_json(&sidecar_path(&p)).unwrap();
        assert_eq!(s.scale, 1.0);
        assert_eq!(s.wavelength_nm, Some(660.0));
        assert_eq!(read_image(&p).unwrap(), img);
    }

    #[test]
    fn png_scales_fractional_values() {
        let dir = tempfile::tempdir().unwrap();
        let img =
            ScalarImage::from_fn(6, 3, 0.278, ImageKind::Reflectance, |x, y| 0.01 * (x + y) as f64 + 0.001).unwrap();
        let p = dir.path().join("r.png");
        write_image(&p, &img, None).unwrap();
        let back = read_image(&p).unwrap();
        let max = img.data().iter().cloned().fold(0.0, f64::max);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= max / 65535.0);
        }
        assert_eq!(back.kind(), ImageKind::Reflectance);
    }

    #[test]
    fn negative_png_is_rejected_and_raw_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = ScalarImage::from_fn(3, 3, 0.278, ImageKind::Height, |x, _| x as f64 - 1.3).unwrap();
        assert!(matches!(write_image(&dir.path().join("h.png"), &img, None), Err(Error::Format { .. })));
        let p = dir.path().join("h.f64");
        write_image(&p, &img, None).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }

    #[test]
    fn mask_and_rgb_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Mask::from_fn(7, 5, |x, y| (x + y) % 3 == 0);
        let p = dir.path().join("m.png");
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
        let rgb: Vec<u8> = (0..4 * 2 * 3).map(|v| (v * 10) as u8).collect();
        let q = dir.path().join("c.png");
        write_rgb(&q, 4, 2, &rgb).unwrap();
        assert_eq!(read_rgb(&q).unwrap(), (4, 2, rgb));
    }

    #[test]
    fn lut_binary_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let lut = table();
        let p = dir.path().join("t.sflut");
        save_lut(&p, &lut).unwrap();
        assert_eq!(load_lut(&p).unwrap(), lut);
        assert_eq!(load_lut(&p.with_extension("json")).unwrap(), lut);
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[..6], b"SFLUT1");
        assert_eq!(bytes.len(), 6 + 12 + 40 + 8 * (4 + 3 + 24));
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_lut(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn calibration_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let amp = |v: f64| ScalarImage::filled(4, 3, 0.278, ImageKind::Amplitude, v).unwrap();
        let meta = CalibrationMeta {
            rd_predicted_dc: 0.4,
            rd_predicted_ac: 0.2,
            ref_mua: 0.0239,
            ref_musp: 0.957,
            wavelength_nm: 660.0,
        };
        let cal = CalibrationSet::new(amp(1000.0 / 3.0), amp(123.456), meta).unwrap();
        save_calibration(dir.path(), &cal).unwrap();
        assert_eq!(load_calibration(dir.path()).unwrap(), cal);
    }
}
