//! Decoding order, SIC rates and the closed-form NOMA power allocation.
//!
//! Users are indexed in decoding order throughout the crate: user 0 is the
//! strongest user, whose signal is decoded last and who sees no intra-cell
//! interference after SIC. User `k` treats the signals of users `0..k` as
//! interference, received through its own channel.

use serde::{Deserialize, Serialize};

use crate::channel::SystemGeometry;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NomaConfig {
    pub p_max: f64,
    pub sigma2: f64,
    /// Per-user rate targets in decoding order (bps/Hz).
    pub gamma: Vec<f64>,
    pub t_coherence: f64,
}

impl NomaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_max > 0.0) || !(self.sigma2 > 0.0) {
            return Err(CoreError::invalid("p_max and sigma2 must be positive"));
        }
        if self.gamma.is_empty() || self.gamma.iter().any(|g| !(*g >= 0.0)) {
            return Err(CoreError::invalid("rate targets must be non-negative"));
        }
        if !(self.t_coherence > 0.0) {
            return Err(CoreError::invalid("coherence time must be positive"));
        }
        Ok(())
    }

    pub fn num_users(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub p: Vec<f64>,
    pub feasible: bool,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub per_user_rate: Vec<f64>,
    pub per_user_adjusted: Vec<f64>,
    pub sum_adjusted: f64,
    pub overhead_symbols: f64,
    /// Set when the block could not meet the rate targets and carries no data.
    pub outage: bool,
}

impl RateReport {
    /// Report for a block in outage: all rates zero.
    pub fn outage(k: usize, overhead: f64) -> Self {
        RateReport {
            per_user_rate: vec![0.0; k],
            per_user_adjusted: vec![0.0; k],
            sum_adjusted: 0.0,
            overhead_symbols: overhead,
            outage: true,
        }
    }
}

/// Users sorted by distance to the BS, nearest first.
///
/// Entry `i` of the result is the original index of the user decoded with
/// rank `i`; rank 0 is the strongest user.
pub fn decoding_order(geo: &SystemGeometry) -> Result<Vec<usize>> {
    let d = geo.bs_distances();
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    if order.windows(2).any(|w| d[w[0]] == d[w[1]]) {
        return Err(CoreError::invalid(
            "tied BS-user distances; perturb the user positions",
        ));
    }
    Ok(order)
}

/// Achievable SIC rates in bps/Hz for gains and powers in decoding order.
pub fn sic_rates(gains: &[f64], p: &[f64], sigma2: f64) -> Result<Vec<f64>> {
    if gains.len() != p.len() {
        return Err(CoreError::invalid("gains and powers differ in length"));
    }
    if let Some(g) = gains.iter().find(|g| !(**g > 0.0)) {
        return Err(CoreError::invalid(format!("channel gains must be positive, got {g}")));
    }
    Ok(sic_rates_unchecked(gains, p, sigma2))
}

pub(crate) fn sic_rates_unchecked(gains: &[f64], p: &[f64], sigma2: f64) -> Vec<f64> {
    let mut stronger = 0.0;
    gains
        .iter()
        .zip(p)
        .map(|(&g, &pk)| {
            let r = (1.0 + pk * g / (stronger * g + sigma2)).log2();
            stronger += pk;
            r
        })
        .collect()
}

/// Minimum total power with which every user meets its target.
pub fn required_power(gains: &[f64], gamma: &[f64], sigma2: f64) -> f64 {
    let mut total = 0.0;
    for (&g, &gk) in gains.iter().zip(gamma) {
        let a = gk.exp2() - 1.0;
        total += a * (total + sigma2 / g);
    }
    total
}

/// Closed-form allocation: users `K-1 .. 1` get exactly the power their
/// targets need, user 0 takes what is left.
pub fn optimal_power_allocation(gains: &[f64], cfg: &NomaConfig) -> PowerAllocation {
    let k = gains.len();
    assert_eq!(k, cfg.gamma.len(), "gains and targets differ in length");
    let mut p = vec![0.0; k];
    let mut remaining = cfg.p_max;
    for i in (1..k).rev() {
        let two_g = cfg.gamma[i].exp2();
        p[i] = (two_g - 1.0) / two_g * (remaining + cfg.sigma2 / gains[i]);
        remaining -= p[i];
    }
    p[0] = remaining;
    let feasible = gains.iter().all(|g| *g > 0.0)
        && p[0] >= (cfg.gamma[0].exp2() - 1.0) * cfg.sigma2 / gains[0]
        && p.iter().skip(1).all(|&x| x > 0.0);
    if !feasible {
        for x in &mut p {
            *x = x.max(0.0);
        }
    }
    let slack = cfg.p_max - p.iter().sum::<f64>();
    PowerAllocation { p, feasible, slack }
}

/// Scales raw rates by the fraction of the block left after `overhead`
/// training symbols.
pub fn adjusted_rates(raw: &[f64], overhead: f64, t_c: f64) -> Result<RateReport> {
    if !(overhead >= 0.0) || !(overhead < t_c) {
        return Err(CoreError::invalid(format!(
            "overhead {overhead} must lie in [0, T_c = {t_c})"
        )));
    }
    let factor = 1.0 - overhead / t_c;
    let adjusted: Vec<f64> = raw.iter().map(|r| r * factor).collect();
    Ok(RateReport {
        per_user_rate: raw.to_vec(),
        sum_adjusted: adjusted.iter().sum(),
        per_user_adjusted: adjusted,
        overhead_symbols: overhead,
        outage: false,
    })
}

/// Short-term NOMA step on known gains: allocate, then report rates, or an
/// outage when the targets cannot be met.
pub fn allocate_and_rate(
    gains: &[f64],
    cfg: &NomaConfig,
    overhead: f64,
) -> Result<(PowerAllocation, RateReport)> {
    let alloc = optimal_power_allocation(gains, cfg);
    if !alloc.feasible {
        if !(overhead < cfg.t_coherence) {
            return Err(CoreError::invalid("overhead exceeds the coherence time"));
        }
        return Ok((alloc, RateReport::outage(gains.len(), overhead)));
    }
    let raw = sic_rates(gains, &alloc.p, cfg.sigma2)?;
    let report = adjusted_rates(&raw, overhead, cfg.t_coherence)?;
    Ok((alloc, report))
}
