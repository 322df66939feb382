//! White Monte Carlo photon transport in a semi-infinite homogeneous medium.
//!
//! A single absorption-free simulation is run at the reference scattering
//! `μs′ = 1 mm⁻¹`. Every escaping packet is tallied by exit radius and by the
//! total pathlength it travelled, so any other `(μa, μs′)` is reached
//! afterwards by similarity scaling of lengths and Beer–Lambert reweighting.
//!
//! Pathlengths are binned logarithmically. Each `(radius, path)` cell keeps
//! the packet weight and the first two moments of the offset from the bin's
//! reference length, so `exp(-a·L)` is evaluated per cell to second order
//! around that reference instead of at a single representative length.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Shortest pathlength resolved by the path histogram, in reference mm.
const PATH_MIN: f64 = 1e-4;
const PATH_BINS_PER_DECADE: f64 = 32.0;

/// Parameters of the white Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    pub photon_count: u64,
    pub anisotropy_g: f64,
    pub n_medium: f64,
    pub n_ambient: f64,
    /// Radial bin width at the reference scattering, mm.
    pub radial_bin_width: f64,
    /// Radial extent of the histogram at the reference scattering, mm.
    pub radial_extent: f64,
    pub rng_seed: u64,
    pub roulette_threshold: f64,
    pub roulette_survival: f64,
    /// Number of independent photon partitions, each with its own stream.
    pub partitions: u32,
    /// Packets still inside the medium after this reference pathlength (mm)
    /// are tallied in the far-field cell.
    pub path_cap: f64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            photon_count: 10_000_000,
            anisotropy_g: 0.9,
            n_medium: 1.4,
            n_ambient: 1.0,
            radial_bin_width: 0.05,
            radial_extent: 200.0,
            rng_seed: 1,
            roulette_threshold: 1e-4,
            roulette_survival: 0.1,
            partitions: 16,
            path_cap: 1e3,
        }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<()> {
        if self.photon_count < 1000 {
            return Err(Error::InvalidConfig("photon_count must be at least 1000"));
        }
        if !(self.anisotropy_g > -1.0 && self.anisotropy_g < 1.0) {
            return Err(Error::InvalidConfig("anisotropy g must lie in (-1, 1)"));
        }
        if !(self.n_medium > 0.0 && self.n_ambient > 0.0) {
            return Err(Error::InvalidConfig("refractive indices must be positive"));
        }
        if !(self.radial_bin_width > 0.0) {
            return Err(Error::InvalidConfig("radial bin width must be positive"));
        }
        if !(self.radial_extent >= 100.0) || self.radial_extent < self.radial_bin_width {
            return Err(Error::InvalidConfig("radial extent must be at least 100 mm"));
        }
        if !(self.roulette_threshold > 0.0 && self.roulette_threshold < 1.0) {
            return Err(Error::InvalidConfig("roulette threshold must lie in (0, 1)"));
        }
        if !(self.roulette_survival > 0.0 && self.roulette_survival < 1.0) {
            return Err(Error::InvalidConfig("roulette survival must lie in (0, 1)"));
        }
        if self.partitions == 0 || u64::from(self.partitions) > self.photon_count {
            return Err(Error::InvalidConfig("partitions must lie in [1, photon_count]"));
        }
        if !(self.path_cap > 10.0 * PATH_MIN) || !self.path_cap.is_finite() {
            return Err(Error::InvalidConfig("path cap must be finite and well above 1e-3 mm"));
        }
        Ok(())
    }

    /// Photons launched by partition `index`; the remainder goes to the first
    /// partitions.
    pub fn partition_photons(&self, index: u32) -> u64 {
        let p = u64::from(self.partitions);
        let base = self.photon_count / p;
        base + u64::from(u64::from(index) < self.photon_count % p)
    }

    /// Specular reflectance at normal incidence on entry.
    pub fn specular(&self) -> f64 {
        let r = (self.n_ambient - self.n_medium) / (self.n_ambient + self.n_medium);
        r * r
    }
}

/// Radially and pathlength-resolved diffuse reflectance of a pencil beam.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialReflectance {
    bin_width: f64,
    radial_bins: usize,
    path_bins: usize,
    path_cap: f64,
    /// Cell `(r, l)` lives at `r * path_bins + l`; row `radial_bins` collects
    /// packets escaping beyond the radial extent.
    weight: Vec<f64>,
    moment1: Vec<f64>,
    moment2: Vec<f64>,
    far_field: f64,
    launched: u64,
    escaped_sum: f64,
    escaped_sq_sum: f64,
    length_scale: f64,
    absorption: f64,
}

impl RadialReflectance {
    fn empty(cfg: &TransportConfig) -> Self {
        let radial_bins = libm::ceil(cfg.radial_extent / cfg.radial_bin_width) as usize;
        let path_bins = libm::ceil(PATH_BINS_PER_DECADE * libm::log10(cfg.path_cap / PATH_MIN)) as usize;
        let cells = (radial_bins + 1) * path_bins;
        Self {
            bin_width: cfg.radial_bin_width,
            radial_bins,
            path_bins,
            path_cap: cfg.path_cap,
            weight: vec![0.0; cells],
            moment1: vec![0.0; cells],
            moment2: vec![0.0; cells],
            far_field: 0.0,
            launched: 0,
            escaped_sum: 0.0,
            escaped_sq_sum: 0.0,
            length_scale: 1.0,
            absorption: 0.0,
        }
    }

    fn path_log_step() -> f64 {
        core::f64::consts::LN_10 / PATH_BINS_PER_DECADE
    }

    /// Reference pathlength of path bin `l` (geometric bin centre), reference mm.
    fn path_reference(l: usize) -> f64 {
        PATH_MIN * libm::exp((l as f64 + 0.5) * Self::path_log_step())
    }

    #[inline]
    fn tally(&mut self, rho: f64, path: f64, w: f64) {
        let r = ((rho / self.bin_width) as usize).min(self.radial_bins);
        let l = if path <= PATH_MIN {
            0
        } else {
            ((libm::log(path / PATH_MIN) / Self::path_log_step()) as usize).min(self.path_bins - 1)
        };
        let d = path - Self::path_reference(l);
        let i = r * self.path_bins + l;
        self.weight[i] += w;
        self.moment1[i] += w * d;
        self.moment2[i] += w * d * d;
    }

    /// Adds another tally with identical geometry.
    pub fn merge(&mut self, other: &RadialReflectance) -> Result<()> {
        if self.radial_bins != other.radial_bins
            || self.path_bins != other.path_bins
            || self.bin_width != other.bin_width
            || self.path_cap != other.path_cap
            || self.length_scale != other.length_scale
            || self.absorption != other.absorption
        {
            return Err(Error::InvalidConfig("cannot merge tallies with different geometry"));
        }
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.moment1.iter_mut().zip(&other.moment1) {
            *a += b;
        }
        for (a, b) in self.moment2.iter_mut().zip(&other.moment2) {
            *a += b;
        }
        self.far_field += other.far_field;
        self.launched += other.launched;
        self.escaped_sum += other.escaped_sum;
        self.escaped_sq_sum += other.escaped_sq_sum;
        Ok(())
    }

    pub fn launched(&self) -> u64 {
        self.launched
    }

    /// Length scale relative to the reference simulation (`1/μs′`).
    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    /// Radial bin edges in mm, `radial_bins + 1` values from 0.
    pub fn bin_edges(&self) -> Vec<f64> {
        let w = self.bin_width * self.length_scale;
        (0..=self.radial_bins).map(|i| i as f64 * w).collect()
    }

    fn absorbed_cell(&self, i: usize, l: usize) -> f64 {
        let a = self.absorption;
        if a == 0.0 {
            return self.weight[i];
        }
        libm::exp(-a * Self::path_reference(l)) * (self.weight[i] - a * self.moment1[i] + 0.5 * a * a * self.moment2[i])
    }

    fn far_field_weight(&self) -> f64 {
        self.far_field * far_field_survival(self.absorption * self.path_cap)
    }

    /// Escaped weight per launched photon in each radial bin.
    pub fn bin_weights(&self) -> Vec<f64> {
        let n = self.launched as f64;
        (0..self.radial_bins)
            .map(|r| (0..self.path_bins).map(|l| self.absorbed_cell(r * self.path_bins + l, l)).sum::<f64>() / n)
            .collect()
    }

    /// Diffuse reflectance per unit area in each radial bin, mm⁻².
    pub fn rd_per_area(&self) -> Vec<f64> {
        let edges = self.bin_edges();
        self.bin_weights()
            .into_iter()
            .enumerate()
            .map(|(r, w)| w / (PI * (edges[r + 1] * edges[r + 1] - edges[r] * edges[r])))
            .collect()
    }

    /// Weight per launched photon escaping beyond the radial extent,
    /// including the far-field tally.
    pub fn overflow_weight(&self) -> f64 {
        let base = self.radial_bins * self.path_bins;
        let ring: f64 = (0..self.path_bins).map(|l| self.absorbed_cell(base + l, l)).sum();
        (ring + self.far_field_weight()) / self.launched as f64
    }

    /// Total diffuse reflectance (escaped weight per launched photon).
    pub fn total(&self) -> f64 {
        let cells: f64 = (0..self.weight.len()).map(|i| self.absorbed_cell(i, i % self.path_bins)).sum();
        (cells + self.far_field_weight()) / self.launched as f64
    }

    /// Standard error of the absorption-free total reflectance estimate.
    pub fn total_standard_error(&self) -> f64 {
        let n = self.launched as f64;
        let mean = self.escaped_sum / n;
        let var = (self.escaped_sq_sum / n - mean * mean).max(0.0);
        libm::sqrt(var / n)
    }

    /// Similarity-scales lengths from the current scattering level by
    /// `1/musp` and applies absorption `mua` through Beer–Lambert reweighting
    /// of the recorded pathlengths.
    pub fn rescale_absorption(&self, mua: f64, musp: f64) -> Result<Self> {
        if !(musp > 0.0) {
            return Err(Error::NonPositiveScattering(musp));
        }
        if !(mua >= 0.0) {
            return Err(Error::InvalidConfig("absorption must be non-negative"));
        }
        let mut out = self.clone();
        out.length_scale = self.length_scale / musp;
        out.absorption = self.absorption + mua * out.length_scale;
        Ok(out)
    }

    /// Spatial-frequency reflectance at `fx` (mm⁻¹): order-zero Hankel
    /// transform of the radial profile.
    pub fn radial_to_frequency(&self, fx: f64) -> f64 {
        self.frequency_series(1.0, fx).reflectance(0.0)
    }

    /// Hankel-weighted path spectra for the tally rescaled to scattering
    /// `musp`, ready to be evaluated for any absorption.
    pub fn frequency_series(&self, musp: f64, fx: f64) -> FrequencySeries {
        let length_scale = self.length_scale / musp;
        let k = 2.0 * PI * fx;
        let width = self.bin_width * length_scale;
        let mut v0 = vec![0.0; self.path_bins];
        let mut v1 = vec![0.0; self.path_bins];
        let mut v2 = vec![0.0; self.path_bins];
        for r in 0..=self.radial_bins {
            let kernel = if r == self.radial_bins {
                if fx == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                annulus_mean_j0(k, r as f64 * width, (r + 1) as f64 * width)
            };
            if kernel == 0.0 {
                continue;
            }
            let base = r * self.path_bins;
            for l in 0..self.path_bins {
                v0[l] += kernel * self.weight[base + l];
                v1[l] += kernel * self.moment1[base + l];
                v2[l] += kernel * self.moment2[base + l];
            }
        }
        let n = self.launched as f64;
        for v in [&mut v0, &mut v1, &mut v2] {
            v.iter_mut().for_each(|x| *x /= n);
        }
        FrequencySeries {
            v0,
            v1,
            v2,
            far_field: if fx == 0.0 { self.far_field / n } else { 0.0 },
            path_cap: self.path_cap,
            base_absorption: self.absorption,
            length_scale,
        }
    }
}

/// Kernel-weighted path spectra of a tally; see
/// [`RadialReflectance::frequency_series`].
#[derive(Debug, Clone)]
pub struct FrequencySeries {
    v0: Vec<f64>,
    v1: Vec<f64>,
    v2: Vec<f64>,
    far_field: f64,
    path_cap: f64,
    base_absorption: f64,
    length_scale: f64,
}

impl FrequencySeries {
    /// Reflectance after applying additional absorption `mua` (mm⁻¹).
    pub fn reflectance(&self, mua: f64) -> f64 {
        let a = self.base_absorption + mua * self.length_scale;
        if a == 0.0 {
            return self.v0.iter().sum::<f64>() + self.far_field;
        }
        let mut sum = 0.0;
        for l in 0..self.v0.len() {
            let damp = libm::exp(-a * RadialReflectance::path_reference(l));
            if damp == 0.0 {
                break;
            }
            sum += damp * (self.v0[l] - a * self.v1[l] + 0.5 * a * a * self.v2[l]);
        }
        sum + self.far_field * far_field_survival(a * self.path_cap)
    }
}

/// Mean Beer–Lambert factor of packets still travelling at the path cap.
///
/// Return times of a diffusing packet have the tail `P(L > l) ∝ l^(-1/2)`;
/// averaging `exp(-a·L)` over that tail beyond the cap gives
/// `exp(-x) - sqrt(πx)·erfc(sqrt(x))` with `x = a·cap`.
pub fn far_field_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let s = libm::sqrt(x);
    (libm::exp(-x) - libm::sqrt(PI) * s * libm::erfc(s)).max(0.0)
}

/// Mean of `J0(kρ)` over the annulus `a ≤ ρ < b`, weighted by area.
pub fn annulus_mean_j0(k: f64, a: f64, b: f64) -> f64 {
    if k == 0.0 {
        return 1.0;
    }
    let kb = k * b;
    if kb < 1e-4 {
        return 1.0 - k * k * (a * a + b * b) / 8.0;
    }
    2.0 * (b * libm::j1(kb) - a * libm::j1(k * a)) / (k * (b * b - a * a))
}

/// Fresnel reflectance leaving a medium of index `n1` into `n2` with
/// incidence cosine `cos_i`, unpolarised.
pub fn fresnel_reflectance(n1: f64, n2: f64, cos_i: f64) -> f64 {
    if n1 == n2 {
        return 0.0;
    }
    if cos_i > 1.0 - 1e-12 {
        let r = (n1 - n2) / (n1 + n2);
        return r * r;
    }
    if cos_i < 1e-6 {
        return 1.0;
    }
    let sin_i = libm::sqrt(1.0 - cos_i * cos_i);
    let sin_t = n1 * sin_i / n2;
    if sin_t >= 1.0 {
        return 1.0;
    }
    let cos_t = libm::sqrt(1.0 - sin_t * sin_t);
    let cap = cos_i * cos_t - sin_i * sin_t;
    let cam = cos_i * cos_t + sin_i * sin_t;
    let sap = sin_i * cos_t + cos_i * sin_t;
    let sam = sin_i * cos_t - cos_i * sin_t;
    0.5 * sam * sam * (cam * cam + cap * cap) / (sap * sap * cam * cam)
}

/// Cosine of a Henyey–Greenstein deflection for uniform deviate `xi`.
#[inline]
fn henyey_greenstein(g: f64, xi: f64) -> f64 {
    if g == 0.0 {
        return 2.0 * xi - 1.0;
    }
    let g2 = g * g;
    let t = (1.0 - g2) / (1.0 - g + 2.0 * g * xi);
    ((1.0 + g2 - t * t) / (2.0 * g)).clamp(-1.0, 1.0)
}

/// Uniform azimuth as `(sin φ, cos φ)`, by rejection from the unit disc.
#[inline]
fn unit_circle(rng: &mut impl Rng) -> (f64, f64) {
    loop {
        let a = 2.0 * rng.random::<f64>() - 1.0;
        let b = 2.0 * rng.random::<f64>() - 1.0;
        let r2 = a * a + b * b;
        if r2 > 1e-12 && r2 <= 1.0 {
            return (2.0 * a * b / r2, (a * a - b * b) / r2);
        }
    }
}

/// Runs one photon partition on its own random stream.
pub fn simulate_partition(cfg: &TransportConfig, index: u32) -> Result<RadialReflectance> {
    cfg.validate()?;
    let mut tally = RadialReflectance::empty(cfg);
    let mut rng = rng::stream(cfg.rng_seed, u64::from(index));
    let photons = cfg.partition_photons(index);
    let mu_s = 1.0 / (1.0 - cfg.anisotropy_g);
    let launch_weight = 1.0 - cfg.specular();
    for _ in 0..photons {
        let escaped = trace_photon(cfg, mu_s, launch_weight, &mut rng, &mut tally);
        tally.escaped_sum += escaped;
        tally.escaped_sq_sum += escaped * escaped;
    }
    tally.launched = photons;
    Ok(tally)
}

/// Follows one packet until it escapes or exceeds the path cap. Returns the
/// weight it carried out of the medium.
fn trace_photon(
    cfg: &TransportConfig,
    mu_s: f64,
    launch_weight: f64,
    rng: &mut impl Rng,
    tally: &mut RadialReflectance,
) -> f64 {
    let (mut x, mut y, mut z) = (0.0f64, 0.0f64, 0.0f64);
    let (mut ux, mut uy, mut uz) = (0.0f64, 0.0f64, 1.0f64);
    let w = launch_weight;
    let mut path = 0.0f64;
    loop {
        let xi: f64 = rng.random();
        let step = -libm::log(1.0 - xi) / mu_s;
        let to_surface = if uz < 0.0 { z / -uz } else { f64::INFINITY };
        let travel = step.min(to_surface);
        if path + travel > cfg.path_cap {
            tally.far_field += w;
            return w;
        }
        path += travel;
        x += ux * travel;
        y += uy * travel;
        if to_surface <= step {
            z = 0.0;
            // All-or-nothing Fresnel: the packet either leaves whole or is
            // internally reflected whole.
            let r = fresnel_reflectance(cfg.n_medium, cfg.n_ambient, -uz);
            if r == 0.0 || rng.random::<f64>() >= r {
                tally.tally(libm::sqrt(x * x + y * y), path, w);
                return w;
            }
            uz = -uz;
            continue;
        }
        z += uz * travel;

        let cos_t = henyey_greenstein(cfg.anisotropy_g, rng.random());
        let sin_t = libm::sqrt((1.0 - cos_t * cos_t).max(0.0));
        let (sin_p, cos_p) = unit_circle(rng);
        if uz.abs() > 1.0 - 1e-12 {
            ux = sin_t * cos_p;
            uy = sin_t * sin_p;
            uz = cos_t * uz.signum();
        } else {
            let tmp = libm::sqrt(1.0 - uz * uz);
            let nx = sin_t * (ux * uz * cos_p - uy * sin_p) / tmp + ux * cos_t;
            let ny = sin_t * (uy * uz * cos_p + ux * sin_p) / tmp + uy * cos_t;
            let nz = -sin_t * cos_p * tmp + uz * cos_t;
            ux = nx;
            uy = ny;
            uz = nz;
        }
    }
}

/// Runs every partition in index order and merges them in that order.
///
/// The result is bit-identical to any parallel execution that merges the
/// same partitions in index order.
pub fn simulate_white_mc(cfg: &TransportConfig) -> Result<RadialReflectance> {
    cfg.validate()?;
    let mut total = simulate_partition(cfg, 0)?;
    for i in 1..cfg.partitions {
        total.merge(&simulate_partition(cfg, i)?)?;
    }
    Ok(total)
}
