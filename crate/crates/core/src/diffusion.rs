//! Diffusion-approximation reflectance, used as an independent check on the
//! Monte Carlo tables.

use core::f64::consts::PI;

/// Effective internal reflection coefficient for a medium of index `n`
/// against air (polynomial fit).
pub fn effective_reflection(n: f64) -> f64 {
    -1.440 / (n * n) + 0.710 / n + 0.668 + 0.0636 * n
}

/// Diffuse reflectance of a semi-infinite medium under planar illumination
/// modulated at spatial frequency `fx` (mm⁻¹).
pub fn diffusion_rd(mua: f64, musp: f64, fx: f64, n_medium: f64) -> f64 {
    let r_eff = effective_reflection(n_medium);
    let a = (1.0 - r_eff) / (2.0 * (1.0 + r_eff));
    let mu_tr = mua + musp;
    let albedo = musp / mu_tr;
    let k = 2.0 * PI * fx;
    let mu_eff = libm::sqrt(3.0 * mua * mu_tr + k * k);
    let q = mu_eff / mu_tr;
    3.0 * a * albedo / ((q + 1.0) * (q + 3.0 * a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conservation_limit() {
        let r = diffusion_rd(1e-9, 1.0, 0.0, 1.0);
        assert!((r - 1.0).abs() < 1e-3, "{r}");
    }

    #[test]
    fn decreasing_in_frequency() {
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let r = diffusion_rd(0.02, 1.1, i as f64 * 0.05, 1.4);
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn frozen_reference_value() {
        // Direct evaluation for (0.01, 1.0, 0.2, 1.4):
        // R_eff = 0.529489, A = 0.153813, mu_eff' = 1.268636 (evaluated by hand).
        let r = diffusion_rd(0.01, 1.0, 0.2, 1.4);
        assert!((r - FROZEN_0_01_1_0_0_2_1_4).abs() < 1e-12, "{r:.15}");
    }

    const FROZEN_0_01_1_0_0_2_1_4: f64 = 0.117_906_947_952_362_96;
}
