//! Multi-threaded white Monte Carlo. Partitions run on the rayon pool and
//! are merged in index order, so the tally does not depend on thread count.

use rayon::prelude::*;
use sfdoptics_core::transport::{simulate_partition, RadialReflectance, TransportConfig};
use sfdoptics_core::LookupTable;

use crate::error::Result;

pub fn simulate_white_mc_parallel(cfg: &TransportConfig) -> Result<RadialReflectance> {
    cfg.validate()?;
    let parts = (0..cfg.partitions)
        .into_par_iter()
        .map(|i| simulate_partition(cfg, i))
        .collect::<sfdoptics_core::Result<Vec<_>>>()?;
    let mut parts = parts.into_iter();
    let mut total = parts.next().expect("validated config has at least one partition");
    for p in parts {
        total.merge(&p)?;
    }
    Ok(total)
}

pub fn build_lut_parallel(
    cfg: &TransportConfig,
    mua_grid: Vec<f64>,
    musp_grid: Vec<f64>,
    fx_ac: f64,
) -> Result<LookupTable> {
    let tally = simulate_white_mc_parallel(cfg)?;
    log::info!(
        "white Monte Carlo: {} photons, total reflectance {:.5} ± {:.5}",
        cfg.photon_count,
        tally.total(),
        tally.total_standard_error()
    );
    Ok(LookupTable::from_tally(&tally, cfg, mua_grid, musp_grid, fx_ac)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sfdoptics_core::simulate_white_mc;

    #[test]
    fn matches_sequential_for_any_pool_size() {
        let cfg =
            TransportConfig { photon_count: 4000, anisotropy_g: 0.0, partitions: 5, ..TransportConfig::default() };
        let seq = simulate_white_mc(&cfg).unwrap();
        for threads in [1, 3, 8] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let par = pool.install(|| simulate_white_mc_parallel(&cfg)).unwrap();
            assert_eq!(par, seq);
        }
    }
}
