//! Comparison schemes: orthogonal access over the STAR surface and NOMA over
//! a split surface of one transmit-only and one reflect-only half.

use serde::{Deserialize, Serialize};

use crate::bte::{conventional_ris_mask, optimize_long_term_with, BteOptions, BteSolution, PenaltySchedule};
use crate::channel::{effective_channel, ChannelRealization, Region, StatisticalCsi};
use crate::coefficients::{align_phases, partition_to_coefficients, SurfacePartition};
use crate::error::{CoreError, Result};
use crate::noma::{adjusted_rates, NomaConfig, RateReport};
use crate::pte::{optimize_partition_in, PoolLayout, PteSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkScheme {
    Fdma,
    Tdma,
    CrNomaBte,
    CrNomaPte,
}

impl BenchmarkScheme {
    /// Training symbols per coherence block.
    pub fn overhead(self, num_elements: usize, num_users: usize) -> f64 {
        let (m, k) = (num_elements as f64, num_users as f64);
        match self {
            BenchmarkScheme::Fdma | BenchmarkScheme::CrNomaPte => m + k,
            BenchmarkScheme::Tdma => k * (m + 1.0),
            BenchmarkScheme::CrNomaBte => k,
        }
    }
}

/// Orthogonal bands of width `1/K`, each with noise `σ²/K`, over the PTE
/// surface configuration. Users get the least power meeting their targets
/// and user 0 the rest.
pub fn fdma_rates(real: &ChannelRealization, partition: &SurfacePartition, cfg: &NomaConfig) -> Result<RateReport> {
    let k = real.num_users();
    let m = real.num_elements();
    if partition.num_subsurfaces() != k || partition.num_elements() != m || cfg.num_users() != k {
        return Err(CoreError::invalid("partition and targets must match the realization"));
    }
    let overhead = BenchmarkScheme::Fdma.overhead(m, k);
    if overhead >= cfg.t_coherence {
        return Ok(RateReport::outage(k, overhead));
    }
    let phases = align_phases(real, partition)?;
    let coeffs = partition_to_coefficients(partition, &phases)?;
    let kf = k as f64;
    let noise = cfg.sigma2 / kf;
    let gains = (0..k)
        .map(|u| effective_channel(real, &coeffs.v_t, &coeffs.v_r, u, partition.modes[u]).map(|c| c.norm_sqr()))
        .collect::<Result<Vec<f64>>>()?;
    let mut p: Vec<f64> = gains
        .iter()
        .zip(&cfg.gamma)
        .map(|(g, gam)| ((kf * gam).exp2() - 1.0) * noise / g)
        .collect();
    let used: f64 = p.iter().sum();
    if !(used <= cfg.p_max) {
        return Ok(RateReport::outage(k, overhead));
    }
    p[0] += cfg.p_max - used;
    let raw: Vec<f64> = gains.iter().zip(&p).map(|(g, pk)| (1.0 + pk * g / noise).log2() / kf).collect();
    adjusted_rates(&raw, overhead, cfg.t_coherence)
}

/// Equal time slots, one per user, with every element in that user's mode
/// and co-phased to it, at full power.
pub fn tdma_rates(real: &ChannelRealization, regions: &[Region], cfg: &NomaConfig) -> Result<RateReport> {
    let k = real.num_users();
    let m = real.num_elements();
    if regions.len() != k || cfg.num_users() != k {
        return Err(CoreError::invalid("regions and targets must cover every user"));
    }
    let overhead = BenchmarkScheme::Tdma.overhead(m, k);
    if overhead >= cfg.t_coherence {
        return Ok(RateReport::outage(k, overhead));
    }
    let kf = k as f64;
    let raw: Vec<f64> = (0..k)
        .map(|u| {
            let amp = real.h[u].norm() + real.w[u].iter().map(|z| z.norm()).sum::<f64>();
            (1.0 + cfg.p_max * amp * amp / cfg.sigma2).log2() / kf
        })
        .collect();
    if raw.iter().zip(&cfg.gamma).any(|(r, g)| r < g) {
        return Ok(RateReport::outage(k, overhead));
    }
    adjusted_rates(&raw, overhead, cfg.t_coherence)
}

/// Long-term BTE design with the first half of the elements frozen to
/// transmission and the second half to reflection.
pub fn cr_noma_bte(
    scsi: &StatisticalCsi,
    cfg: &NomaConfig,
    sched: &PenaltySchedule,
    opts: &BteOptions,
) -> Result<BteSolution> {
    let mask = conventional_ris_mask(scsi.num_elements())?;
    let opts = BteOptions { mode_mask: Some(mask), ..opts.clone() };
    optimize_long_term_with(scsi, cfg, sched, None, &opts)
}

/// Partition search inside the transmit half and the reflect half.
pub fn cr_noma_pte(scsi: &StatisticalCsi, cfg: &NomaConfig) -> Result<PteSolution> {
    let layout = PoolLayout::split(scsi.num_elements(), &scsi.regions)?;
    optimize_partition_in(scsi, cfg, &layout)
}
