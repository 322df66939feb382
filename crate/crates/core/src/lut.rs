//! Lookup table mapping `(μa, μs′)` to the diffuse reflectance pair
//! `(R_d at fx = 0, R_d at fx_ac)`, with forward interpolation and inversion.
//!
//! Interpolation is bilinear in `(ln μa, ln μs′)`. Inversion searches the
//! node grid coarsely, then runs damped Newton iterations on the bilinear
//! surface in continuous index coordinates.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport::{self, RadialReflectance, TransportConfig};

pub const LUT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_FX_AC: f64 = 0.2;

/// Residual norm above which an inversion is reported invalid.
pub const INVERSION_TOLERANCE: f64 = 1e-3;

/// How a table was produced; copied into every saved table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LutProvenance {
    pub g: f64,
    pub n_medium: f64,
    pub seed: u64,
    pub photon_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    mua_grid: Vec<f64>,
    musp_grid: Vec<f64>,
    /// Row-major over `(μa index, μs′ index)`.
    rd_dc: Vec<f64>,
    rd_ac: Vec<f64>,
    fx_ac: f64,
    provenance: LutProvenance,
    version: u32,
    ln_mua: Vec<f64>,
    ln_musp: Vec<f64>,
}

/// Result of inverting one reflectance pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub mua: f64,
    pub musp: f64,
    pub valid: bool,
    pub residual: f64,
}

/// `n` logarithmically spaced values from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && min > 0.0 && max > min);
    let (a, b) = (libm::log(min), libm::log(max));
    (0..n)
        .map(|i| match i {
            0 => min,
            _ if i == n - 1 => max,
            _ => libm::exp(a + (b - a) * i as f64 / (n - 1) as f64),
        })
        .collect()
}

pub fn default_mua_grid() -> Vec<f64> {
    log_grid(0.001, 0.5, 128)
}

pub fn default_musp_grid() -> Vec<f64> {
    log_grid(0.05, 5.0, 128)
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidLut("grids need at least two nodes"));
    }
    if grid[0] <= 0.0 || !grid.windows(2).all(|w| w[0] < w[1]) || !grid.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidLut("grids must be positive and strictly ascending"));
    }
    Ok(())
}

impl LookupTable {
    /// Assembles a table from stored arrays, checking every table invariant.
    pub fn from_parts(
        mua_grid: Vec<f64>,
        musp_grid: Vec<f64>,
        rd_dc: Vec<f64>,
        rd_ac: Vec<f64>,
        fx_ac: f64,
        provenance: LutProvenance,
    ) -> Result<Self> {
        check_grid(&mua_grid)?;
        check_grid(&musp_grid)?;
        let (ni, nj) = (mua_grid.len(), musp_grid.len());
        if rd_dc.len() != ni * nj || rd_ac.len() != ni * nj {
            return Err(Error::InvalidLut("reflectance arrays do not match the grid shape"));
        }
        if !(fx_ac > 0.0) {
            return Err(Error::InvalidLut("AC spatial frequency must be positive"));
        }
        if rd_dc.iter().chain(&rd_ac).any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidLut("reflectance outside [0, 1]"));
        }
        for (i, &mua) in mua_grid.iter().enumerate() {
            for j in 0..nj {
                let k = i * nj + j;
                if mua > 0.0 && rd_ac[k] > rd_dc[k] {
                    return Err(Error::InvalidLut("AC reflectance exceeds DC reflectance"));
                }
                if i + 1 < ni && rd_dc[k + nj] >= rd_dc[k] {
                    return Err(Error::InvalidLut("DC reflectance not strictly decreasing in μa"));
                }
            }
        }
        let ln_mua = mua_grid.iter().map(|&v| libm::log(v)).collect();
        let ln_musp = musp_grid.iter().map(|&v| libm::log(v)).collect();
        Ok(Self { mua_grid, musp_grid, rd_dc, rd_ac, fx_ac, provenance, version: LUT_FORMAT_VERSION, ln_mua, ln_musp })
    }

    /// Evaluates a white Monte Carlo tally on the grid.
    pub fn from_tally(
        tally: &RadialReflectance,
        cfg: &TransportConfig,
        mua_grid: Vec<f64>,
        musp_grid: Vec<f64>,
        fx_ac: f64,
    ) -> Result<Self> {
        check_grid(&mua_grid)?;
        check_grid(&musp_grid)?;
        let (ni, nj) = (mua_grid.len(), musp_grid.len());
        let mut rd_dc = alloc::vec![0.0; ni * nj];
        let mut rd_ac = alloc::vec![0.0; ni * nj];
        for (j, &musp) in musp_grid.iter().enumerate() {
            let dc = tally.frequency_series(musp, 0.0);
            let ac = tally.frequency_series(musp, fx_ac);
            for (i, &mua) in mua_grid.iter().enumerate() {
                rd_dc[i * nj + j] = dc.reflectance(mua);
                rd_ac[i * nj + j] = ac.reflectance(mua);
            }
        }
        let provenance = LutProvenance {
            g: cfg.anisotropy_g,
            n_medium: cfg.n_medium,
            seed: cfg.rng_seed,
            photon_count: cfg.photon_count,
        };
        Self::from_parts(mua_grid, musp_grid, rd_dc, rd_ac, fx_ac, provenance)
    }

    pub fn mua_grid(&self) -> &[f64] {
        &self.mua_grid
    }

    pub fn musp_grid(&self) -> &[f64] {
        &self.musp_grid
    }

    pub fn rd_dc(&self) -> &[f64] {
        &self.rd_dc
    }

    pub fn rd_ac(&self) -> &[f64] {
        &self.rd_ac
    }

    pub fn fx_ac(&self) -> f64 {
        self.fx_ac
    }

    pub fn provenance(&self) -> LutProvenance {
        self.provenance
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Stored values at grid node `(i, j)`.
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        let k = i * self.musp_grid.len() + j;
        (self.rd_dc[k], self.rd_ac[k])
    }

    pub fn contains(&self, mua: f64, musp: f64) -> bool {
        let (ni, nj) = (self.mua_grid.len(), self.musp_grid.len());
        mua >= self.mua_grid[0]
            && mua <= self.mua_grid[ni - 1]
            && musp >= self.musp_grid[0]
            && musp <= self.musp_grid[nj - 1]
    }

    /// Interpolated `(rd_dc, rd_ac)` at `(mua, musp)`.
    pub fn forward(&self, mua: f64, musp: f64) -> Result<(f64, f64)> {
        if !self.contains(mua, musp) {
            return Err(Error::OutOfGrid { mua, musp });
        }
        let p = fractional_index(&self.ln_mua, libm::log(mua));
        let q = fractional_index(&self.ln_musp, libm::log(musp));
        let s = self.surface(p, q);
        Ok((s.dc, s.ac))
    }

    /// Bilinear surface value and index-space Jacobian at `(p, q)`.
    fn surface(&self, p: f64, q: f64) -> Surface {
        let (ni, nj) = (self.mua_grid.len(), self.musp_grid.len());
        let i = (p as usize).min(ni - 2);
        let j = (q as usize).min(nj - 2);
        let (s, t) = (p - i as f64, q - j as f64);
        let corner = |di: usize, dj: usize| self.node(i + di, j + dj);
        let (d00, a00) = corner(0, 0);
        let (d10, a10) = corner(1, 0);
        let (d01, a01) = corner(0, 1);
        let (d11, a11) = corner(1, 1);
        let bilinear = |v00: f64, v10: f64, v01: f64, v11: f64| {
            let value = (1.0 - s) * (1.0 - t) * v00 + s * (1.0 - t) * v10 + (1.0 - s) * t * v01 + s * t * v11;
            let ds = (1.0 - t) * (v10 - v00) + t * (v11 - v01);
            let dt = (1.0 - s) * (v01 - v00) + s * (v11 - v10);
            (value, ds, dt)
        };
        let (dc, dc_p, dc_q) = bilinear(d00, d10, d01, d11);
        let (ac, ac_p, ac_q) = bilinear(a00, a10, a01, a11);
        Surface { dc, ac, jacobian: [[dc_p, dc_q], [ac_p, ac_q]] }
    }

    fn index_to_coefficients(&self, p: f64, q: f64) -> (f64, f64) {
        (libm::exp(interpolate_index(&self.ln_mua, p)), libm::exp(interpolate_index(&self.ln_musp, q)))
    }

    /// Finds `(μa, μs′)` whose interpolated reflectances best match the
    /// measured pair. Never fails: unmatched or edge-clamped solutions are
    /// returned with `valid = false`.
    pub fn invert(&self, rd_dc: f64, rd_ac: f64) -> Inversion {
        let (ni, nj) = (self.mua_grid.len(), self.musp_grid.len());
        if !rd_dc.is_finite() || !rd_ac.is_finite() {
            let (mua, musp) = (self.mua_grid[0], self.musp_grid[0]);
            return Inversion { mua, musp, valid: false, residual: f64::INFINITY };
        }
        let node_residual = |i: usize, j: usize| {
            let (d, a) = self.node(i, j);
            (d - rd_dc) * (d - rd_dc) + (a - rd_ac) * (a - rd_ac)
        };

        // Coarse pass on a strided node lattice, then a dense local pass.
        let stride_i = (ni / 16).max(1);
        let stride_j = (nj / 16).max(1);
        let mut best = (0usize, 0usize, f64::INFINITY);
        let strided = |n: usize, stride: usize| (0..n).step_by(stride).chain(core::iter::once(n - 1));
        for i in strided(ni, stride_i) {
            for j in strided(nj, stride_j) {
                let r = node_residual(i, j);
                if r < best.2 {
                    best = (i, j, r);
                }
            }
        }
        let (ci, cj) = (best.0, best.1);
        for i in ci.saturating_sub(stride_i)..=(ci + stride_i).min(ni - 1) {
            for j in cj.saturating_sub(stride_j)..=(cj + stride_j).min(nj - 1) {
                let r = node_residual(i, j);
                if r < best.2 {
                    best = (i, j, r);
                }
            }
        }

        let (p_max, q_max) = ((ni - 1) as f64, (nj - 1) as f64);
        let (mut p, mut q) = (best.0 as f64, best.1 as f64);
        let residual_at = |p: f64, q: f64| {
            let s = self.surface(p, q);
            let (e0, e1) = (s.dc - rd_dc, s.ac - rd_ac);
            (libm::sqrt(e0 * e0 + e1 * e1), e0, e1, s.jacobian)
        };
        let (mut norm, mut e0, mut e1, mut jac) = residual_at(p, q);
        for _ in 0..100 {
            if norm < 1e-15 {
                break;
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if det.abs() < 1e-300 {
                break;
            }
            let dp = -(jac[1][1] * e0 - jac[0][1] * e1) / det;
            let dq = -(-jac[1][0] * e0 + jac[0][0] * e1) / det;
            let mut lambda = 1.0;
            let mut moved = false;
            while lambda > 1e-6 {
                let np = (p + lambda * dp).clamp(0.0, p_max);
                let nq = (q + lambda * dq).clamp(0.0, q_max);
                let cand = residual_at(np, nq);
                if cand.0 < norm {
                    moved = (np - p).abs() + (nq - q).abs() > 1e-15;
                    p = np;
                    q = nq;
                    (norm, e0, e1, jac) = cand;
                    break;
                }
                lambda *= 0.5;
            }
            if !moved {
                break;
            }
        }

        let on_edge = p <= 0.0 || q <= 0.0 || p >= p_max || q >= q_max;
        let valid = norm <= INVERSION_TOLERANCE && !(on_edge && norm > 1e-9);
        let (mua, musp) = self.index_to_coefficients(p, q);
        Inversion { mua, musp, valid, residual: norm }
    }
}

struct Surface {
    dc: f64,
    ac: f64,
    jacobian: [[f64; 2]; 2],
}

/// Continuous index of `v` within ascending `grid` (assumed in range).
fn fractional_index(grid: &[f64], v: f64) -> f64 {
    let n = grid.len();
    let k = grid.partition_point(|&g| g <= v).clamp(1, n - 1) - 1;
    let t = (v - grid[k]) / (grid[k + 1] - grid[k]);
    k as f64 + t.clamp(0.0, 1.0)
}

fn interpolate_index(grid: &[f64], p: f64) -> f64 {
    let k = (p as usize).min(grid.len() - 2);
    let t = p - k as f64;
    grid[k] + t * (grid[k + 1] - grid[k])
}

/// Runs the white Monte Carlo simulation and evaluates it on the grid.
pub fn build_lut(cfg: &TransportConfig, mua_grid: Vec<f64>, musp_grid: Vec<f64>, fx_ac: f64) -> Result<LookupTable> {
    let tally = transport::simulate_white_mc(cfg)?;
    LookupTable::from_tally(&tally, cfg, mua_grid, musp_grid, fx_ac)
}

/// Table filled from the diffusion model; cheap stand-in for unit tests.
#[cfg(test)]
pub(crate) fn diffusion_table(n: usize) -> LookupTable {
    let mua_grid = log_grid(0.001, 0.5, n);
    let musp_grid = log_grid(0.05, 5.0, n);
    let mut dc = alloc::vec::Vec::new();
    let mut ac = alloc::vec::Vec::new();
    for &mua in &mua_grid {
        for &musp in &musp_grid {
            dc.push(crate::diffusion::diffusion_rd(mua, musp, 0.0, 1.4));
            ac.push(crate::diffusion::diffusion_rd(mua, musp, DEFAULT_FX_AC, 1.4));
        }
    }
    let prov = LutProvenance { g: 0.9, n_medium: 1.4, seed: 0, photon_count: 0 };
    LookupTable::from_parts(mua_grid, musp_grid, dc, ac, DEFAULT_FX_AC, prov).unwrap()
}
