//! Partition-then-estimate: long-term surface partition from path-loss
//! information, and the per-block phase alignment and power allocation.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::channel::{effective_channel, subsurface_channel, ChannelRealization, Region, StatisticalCsi};
use crate::coefficients::{align_phases, partition_to_coefficients, SurfacePartition};
use crate::error::{CoreError, Result};
use crate::noma::{adjusted_rates, optimal_power_allocation, sic_rates_unchecked, NomaConfig, PowerAllocation, RateReport};
use crate::stats::{expected_gain_pte, expected_rate_pte};

/// Element pools and the pool hosting every user. The full STAR surface is a
/// single pool; the split surface has a transmit half and a reflect half.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolLayout {
    pub pools: Vec<Range<usize>>,
    pub pool_of: Vec<usize>,
}

impl PoolLayout {
    pub fn single(num_elements: usize, num_users: usize) -> Self {
        PoolLayout { pools: vec![0..num_elements], pool_of: vec![0; num_users] }
    }

    /// First half transmit-only, second half reflect-only.
    pub fn split(num_elements: usize, regions: &[Region]) -> Result<Self> {
        if !num_elements.is_multiple_of(2) {
            return Err(CoreError::invalid("the split surface needs an even number of elements"));
        }
        let half = num_elements / 2;
        for s in [Region::Transmission, Region::Reflection] {
            if !regions.contains(&s) {
                return Err(CoreError::invalid(format!("no user in the {s:?} half of the split surface")));
            }
        }
        Ok(PoolLayout {
            pools: vec![0..half, half..num_elements],
            pool_of: regions.iter().map(|r| r.index()).collect(),
        })
    }

    fn num_elements(&self) -> usize {
        self.pools.iter().map(|p| p.len()).sum()
    }

    /// Strongest user of `user`'s pool; it takes the pool's remainder.
    fn head(&self, user: usize) -> usize {
        let pool = self.pool_of[user];
        self.pool_of.iter().position(|&p| p == pool).expect("user belongs to its own pool")
    }

    fn check(&self, num_users: usize) -> Result<()> {
        if self.pool_of.len() != num_users {
            return Err(CoreError::invalid("pool map does not cover every user"));
        }
        if self.pool_of.iter().any(|&p| p >= self.pools.len()) {
            return Err(CoreError::invalid("pool index out of range"));
        }
        Ok(())
    }
}

/// One accepted point of the partition search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSearchState {
    pub counts: Vec<usize>,
    /// Approximate expected sum-rate with the `M + K` overhead.
    pub sum_rate: f64,
    pub powers: Vec<f64>,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PteSolution {
    pub partition: SurfacePartition,
    pub expected_gains: Vec<f64>,
    pub reference_powers: Vec<f64>,
    pub expected_sum_rate: f64,
    /// Counts found before refinement.
    pub initial_counts: Vec<usize>,
    pub trace: Vec<PartitionSearchState>,
}

fn gains_of(scsi: &StatisticalCsi, counts: &[usize]) -> Vec<f64> {
    counts.iter().enumerate().map(|(k, &c)| expected_gain_pte(scsi, c, k)).collect()
}

/// Smallest counts respecting the lower bounds `lb` such that expected gains
/// are strictly decreasing in user index; pool heads take what their pool has
/// left. `None` when the pools cannot hold them.
fn ordered_counts(scsi: &StatisticalCsi, lb: &[usize], layout: &PoolLayout) -> Option<Vec<usize>> {
    let k = lb.len();
    let m = layout.num_elements();
    let gain = |c: usize, u: usize| expected_gain_pte(scsi, c, u);
    let mut counts = vec![0; k];
    let mut used = vec![0; layout.pools.len()];
    for u in (0..k).rev() {
        let pool = layout.pool_of[u];
        if layout.head(u) == u {
            counts[u] = layout.pools[pool].len().checked_sub(used[pool])?;
        } else {
            let mut c = lb[u];
            if u + 1 < k {
                let floor = gain(counts[u + 1], u + 1);
                while gain(c, u) <= floor {
                    c += 1;
                    if c > m {
                        return None;
                    }
                }
            }
            used[pool] += c;
            if used[pool] > layout.pools[pool].len() {
                return None;
            }
            counts[u] = c;
        }
        if u + 1 < k && gain(counts[u], u) <= gain(counts[u + 1], u + 1) {
            return None;
        }
    }
    Some(counts)
}

/// Minimum counts giving strictly ordered expected gains when the weakest
/// user owns `m_k0` elements; the strongest user takes the remainder.
pub fn min_counts_for_order(scsi: &StatisticalCsi, m_k0: usize) -> Result<Vec<usize>> {
    min_counts_for_order_in(scsi, m_k0, &PoolLayout::single(scsi.num_elements(), scsi.num_users()))
}

pub fn min_counts_for_order_in(scsi: &StatisticalCsi, m_k0: usize, layout: &PoolLayout) -> Result<Vec<usize>> {
    let k = scsi.num_users();
    layout.check(k)?;
    if m_k0 == 0 {
        return Err(CoreError::invalid("the weakest user needs at least one element"));
    }
    let mut lb = vec![0; k];
    lb[k - 1] = m_k0;
    ordered_counts(scsi, &lb, layout)
        .ok_or_else(|| CoreError::infeasible("decoding order needs more elements than the surface has"))
}

fn state(scsi: &StatisticalCsi, cfg: &NomaConfig, counts: &[usize], iteration: usize) -> Result<Option<PartitionSearchState>> {
    let gains = gains_of(scsi, counts);
    if !gains.windows(2).all(|w| w[0] > w[1]) {
        return Ok(None);
    }
    let alloc = optimal_power_allocation(&gains, cfg);
    if !alloc.feasible {
        return Ok(None);
    }
    let rates = expected_rate_pte(&gains, &alloc.p, cfg.sigma2, cfg.t_coherence, scsi.num_elements())?;
    Ok(Some(PartitionSearchState { counts: counts.to_vec(), sum_rate: rates.iter().sum(), powers: alloc.p, iteration }))
}

fn check_inputs(scsi: &StatisticalCsi, cfg: &NomaConfig, layout: &PoolLayout) -> Result<()> {
    cfg.validate()?;
    let k = scsi.num_users();
    if cfg.num_users() != k {
        return Err(CoreError::invalid("rate targets do not match the number of users"));
    }
    layout.check(k)?;
    if layout.num_elements() != scsi.num_elements() {
        return Err(CoreError::invalid("pools do not match the surface size"));
    }
    if scsi.num_elements() < k {
        return Err(CoreError::invalid("the surface needs at least one element per user"));
    }
    Ok(())
}

/// Initial search: grow the minimum ordered counts until the closed-form allocation
/// meets every rate target.
pub fn initial_partition(scsi: &StatisticalCsi, cfg: &NomaConfig) -> Result<SurfacePartition> {
    initial_partition_in(scsi, cfg, &PoolLayout::single(scsi.num_elements(), scsi.num_users()))
}

pub fn initial_partition_in(scsi: &StatisticalCsi, cfg: &NomaConfig, layout: &PoolLayout) -> Result<SurfacePartition> {
    check_inputs(scsi, cfg, layout)?;
    let k = scsi.num_users();
    let unreachable = || CoreError::infeasible("no surface partition meets the rate targets");
    let m = scsi.num_elements();
    let is_head = |u: usize| layout.head(u) == u;
    if (0..k).all(is_head) {
        let counts: Vec<usize> = layout.pool_of.iter().map(|&p| layout.pools[p].len()).collect();
        return match state(scsi, cfg, &counts, 0)? {
            Some(_) => SurfacePartition::pooled(&counts, &scsi.regions, &layout.pools, &layout.pool_of),
            None => Err(unreachable()),
        };
    }
    // start with one element for the weakest user; if the order cannot be
    // met at all from there, retry with a larger start
    for m_k0 in 1..=m {
        let mut lb = vec![0; k];
        lb[k - 1] = m_k0;
        while let Some(counts) = ordered_counts(scsi, &lb, layout) {
            if state(scsi, cfg, &counts, 0)?.is_some() {
                return SurfacePartition::pooled(&counts, &scsi.regions, &layout.pools, &layout.pool_of);
            }
            for u in (0..k).filter(|&u| !is_head(u)) {
                lb[u] = counts[u] + 1;
            }
        }
        if layout.pools.len() == 1 {
            // one pool: a larger start only leaves less for the strongest user
            break;
        }
    }
    Err(unreachable())
}

/// Refinement: move single elements from the strongest user to the others while
/// the approximate sum-rate increases.
pub fn refine_partition(start: &SurfacePartition, scsi: &StatisticalCsi, cfg: &NomaConfig) -> Result<SurfacePartition> {
    let layout = PoolLayout::single(scsi.num_elements(), scsi.num_users());
    Ok(refine_partition_in(start, scsi, cfg, &layout)?.0)
}

/// Refinement within pools: the donor is the head of the receiving user's pool.
pub fn refine_partition_in(
    start: &SurfacePartition,
    scsi: &StatisticalCsi,
    cfg: &NomaConfig,
    layout: &PoolLayout,
) -> Result<(SurfacePartition, Vec<PartitionSearchState>)> {
    check_inputs(scsi, cfg, layout)?;
    let k = scsi.num_users();
    if start.num_subsurfaces() != k || start.num_elements() != scsi.num_elements() {
        return Err(CoreError::invalid("partition does not match the scenario"));
    }
    let mut current = state(scsi, cfg, &start.counts, 0)?
        .ok_or_else(|| CoreError::invalid("refinement needs a feasible starting partition"))?;
    let mut trace = vec![current.clone()];
    loop {
        let mut improved = None;
        for u in 1..k {
            let donor = layout.head(u);
            if donor == u || current.counts[donor] == 0 {
                continue;
            }
            let mut counts = current.counts.clone();
            counts[donor] -= 1;
            counts[u] += 1;
            if let Some(next) = state(scsi, cfg, &counts, current.iteration + 1)? {
                if next.sum_rate > current.sum_rate {
                    improved = Some(next);
                    break;
                }
            }
        }
        match improved {
            Some(next) => {
                trace.push(next.clone());
                current = next;
            }
            None => break,
        }
    }
    let partition = SurfacePartition::pooled(&current.counts, &scsi.regions, &layout.pools, &layout.pool_of)?;
    Ok((partition, trace))
}

/// Both steps on the full surface.
pub fn optimize_partition(scsi: &StatisticalCsi, cfg: &NomaConfig) -> Result<PteSolution> {
    optimize_partition_in(scsi, cfg, &PoolLayout::single(scsi.num_elements(), scsi.num_users()))
}

pub fn optimize_partition_in(scsi: &StatisticalCsi, cfg: &NomaConfig, layout: &PoolLayout) -> Result<PteSolution> {
    let start = initial_partition_in(scsi, cfg, layout)?;
    let (partition, trace) = refine_partition_in(&start, scsi, cfg, layout)?;
    solution_from(scsi, partition, start.counts, trace)
}

/// Refinement started from explicit counts on the full surface.
pub fn optimize_partition_from(scsi: &StatisticalCsi, cfg: &NomaConfig, counts: &[usize]) -> Result<PteSolution> {
    let layout = PoolLayout::single(scsi.num_elements(), scsi.num_users());
    let start = SurfacePartition::pooled(counts, &scsi.regions, &layout.pools, &layout.pool_of)?;
    let (partition, trace) = refine_partition_in(&start, scsi, cfg, &layout)?;
    solution_from(scsi, partition, counts.to_vec(), trace)
}

fn solution_from(
    scsi: &StatisticalCsi,
    partition: SurfacePartition,
    initial_counts: Vec<usize>,
    trace: Vec<PartitionSearchState>,
) -> Result<PteSolution> {
    let last = trace.last().expect("trace holds the starting state").clone();
    Ok(PteSolution {
        expected_gains: gains_of(scsi, &partition.counts),
        partition,
        reference_powers: last.powers,
        expected_sum_rate: last.sum_rate,
        initial_counts,
        trace,
    })
}

/// Outcome of one coherence block.
#[derive(Debug, Clone, PartialEq)]
pub struct PteBlock {
    pub phases: Vec<f64>,
    pub allocation: PowerAllocation,
    /// Rates on the own-subsurface approximation the powers were chosen for.
    pub report: RateReport,
    /// Rates with the full physical channel, scattered signals included.
    pub realized: RateReport,
}

/// Own-subsurface gains `(|h_k| + Σ_n |[q_k]_n|)²` after alignment.
pub fn approximate_gains(real: &ChannelRealization, partition: &SurfacePartition) -> Result<Vec<f64>> {
    (0..partition.num_subsurfaces())
        .map(|k| {
            let q = subsurface_channel(real, partition, k, k)?;
            let amp = real.h[k].norm() + q.iter().map(|z| z.norm()).sum::<f64>();
            Ok(amp * amp)
        })
        .collect()
}

/// Per-block step: align every subsurface to its owner, allocate power on the
/// approximate gains, report with the `M + K` overhead.
pub fn short_term_pte(real: &ChannelRealization, partition: &SurfacePartition, cfg: &NomaConfig) -> Result<PteBlock> {
    let k = real.num_users();
    let m = real.num_elements();
    if partition.num_subsurfaces() != k || partition.num_elements() != m || cfg.num_users() != k {
        return Err(CoreError::invalid("partition and targets must match the realization"));
    }
    let overhead = (m + k) as f64;
    if overhead >= cfg.t_coherence {
        return Err(CoreError::invalid("training overhead exceeds the coherence time"));
    }
    let phases = align_phases(real, partition)?;
    let gains = approximate_gains(real, partition)?;
    let allocation = optimal_power_allocation(&gains, cfg);
    if !allocation.feasible {
        let out = RateReport::outage(k, overhead);
        return Ok(PteBlock { phases, allocation, report: out.clone(), realized: out });
    }
    let report = adjusted_rates(&sic_rates_unchecked(&gains, &allocation.p, cfg.sigma2), overhead, cfg.t_coherence)?;
    let coeffs = partition_to_coefficients(partition, &phases)?;
    let realized_gains = (0..k)
        .map(|u| effective_channel(real, &coeffs.v_t, &coeffs.v_r, u, partition.modes[u]).map(|c| c.norm_sqr()))
        .collect::<Result<Vec<f64>>>()?;
    let realized = adjusted_rates(&sic_rates_unchecked(&realized_gains, &allocation.p, cfg.sigma2), overhead, cfg.t_coherence)?;
    Ok(PteBlock { phases, allocation, report, realized })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{derive_statistical_csi, drop_users, sample_channels_seeded, PathLossModel};
    use crate::noma::decoding_order;

    fn scsi(m: usize, kt: usize, kr: usize, kappa: f64, seed: u64) -> StatisticalCsi {
        let geo = drop_users([0.0, 0.0, 1.0], [50.0, 0.0, 1.0], 5.0, (kt, kr), seed).unwrap();
        let geo = geo.reordered(&decoding_order(&geo).unwrap()).unwrap();
        derive_statistical_csi(&geo, &PathLossModel::default(), kappa, kappa, m).unwrap()
    }

    fn cfg(k: usize, gamma: f64) -> NomaConfig {
        NomaConfig { p_max: 1.0, sigma2: 1e-11, gamma: vec![gamma; k], t_coherence: 400.0 }
    }

    /// Smallest count for user `u` above `floor` by linear scan from zero.
    fn scan(s: &StatisticalCsi, u: usize, floor: f64, m: usize) -> Option<usize> {
        (0..=m).find(|&c| expected_gain_pte(s, c, u) > floor)
    }

    #[test]
    fn single_user_takes_everything() {
        let s = scsi(10, 1, 0, 1.0, 1);
        assert_eq!(min_counts_for_order(&s, 1).unwrap(), vec![10]);
        let p = initial_partition(&s, &cfg(1, 1.0)).unwrap();
        assert_eq!(p.counts, vec![10]);
    }

    #[test]
    fn min_counts_match_scan() {
        for seed in 0..10 {
            let s = scsi(30, 2, 2, 1.0, seed);
            let Ok(counts) = min_counts_for_order(&s, 2) else { continue };
            assert_eq!(counts[3], 2);
            for u in (1..3).rev() {
                let want = scan(&s, u, expected_gain_pte(&s, counts[u + 1], u + 1), 30).unwrap();
                assert_eq!(counts[u], want, "seed {seed} user {u}");
            }
            assert_eq!(counts.iter().sum::<usize>(), 30);
        }
    }

    #[test]
    fn identical_users_need_one_more_element() {
        let mut s = scsi(10, 2, 0, 1.0, 4);
        s.delta_k[1] = s.delta_k[0];
        s.delta_sk[1] = s.delta_sk[0];
        let counts = min_counts_for_order(&s, 3).unwrap();
        assert_eq!(counts, vec![7, 3]);
        let mut s = scsi(10, 3, 0, 1.0, 4);
        for u in 1..3 {
            s.delta_k[u] = s.delta_k[0];
            s.delta_sk[u] = s.delta_sk[0];
        }
        assert_eq!(min_counts_for_order(&s, 2).unwrap(), vec![5, 3, 2]);
        let s2 = scsi(4, 3, 0, 1.0, 4);
        let mut s2b = s2.clone();
        for u in 1..3 {
            s2b.delta_k[u] = s2b.delta_k[0];
            s2b.delta_sk[u] = s2b.delta_sk[0];
        }
        assert!(min_counts_for_order(&s2b, 2).is_err());
    }

    #[test]
    fn generous_budget_returns_first_partition() {
        let s = scsi(20, 2, 1, 1.0, 2);
        let p = initial_partition(&s, &NomaConfig { gamma: vec![0.01; 3], ..cfg(3, 0.01) }).unwrap();
        assert_eq!(p.counts, min_counts_for_order(&s, 1).unwrap());
        assert!(matches!(initial_partition(&s, &cfg(3, 30.0)), Err(CoreError::InfeasibleProblem(_))));
    }

    fn compositions(m: usize, k: usize) -> Vec<Vec<usize>> {
        if k == 1 {
            return vec![vec![m]];
        }
        let mut out = Vec::new();
        for first in 0..=m {
            for mut rest in compositions(m - first, k - 1) {
                rest.insert(0, first);
                out.push(rest);
            }
        }
        out
    }

    fn feasible(s: &StatisticalCsi, c: &NomaConfig, counts: &[usize]) -> Option<f64> {
        state(s, c, counts, 0).unwrap().map(|st| st.sum_rate)
    }

    #[test]
    fn initial_feasibility_matches_enumeration() {
        let mut agree = 0;
        for seed in 0..30 {
            let s = scsi(10, 2, 1, 1.0, seed);
            let c = cfg(3, 2.5);
            let any = compositions(10, 3).iter().any(|counts| feasible(&s, &c, counts).is_some());
            let found = initial_partition(&s, &c);
            assert_eq!(any, found.is_ok(), "seed {seed}");
            if let Ok(p) = found {
                assert!(feasible(&s, &c, &p.counts).is_some());
                agree += 1;
            }
        }
        assert!(agree > 0);
    }

    #[test]
    fn refinement_is_monotone_and_bounded() {
        let s = scsi(40, 2, 2, 1.0, 7);
        let c = cfg(4, 1.0);
        let sol = optimize_partition(&s, &c).unwrap();
        for w in sol.trace.windows(2) {
            assert!(w[1].sum_rate > w[0].sum_rate);
            assert_eq!(w[1].counts.iter().sum::<usize>(), 40);
        }
        assert!(sol.trace.len() - 1 <= sol.initial_counts[0]);
        let again = refine_partition(&sol.partition, &s, &c).unwrap();
        assert_eq!(again, sol.partition);
    }

    #[test]
    fn moving_an_element_changes_only_two_gains() {
        let s = scsi(20, 2, 1, 1.0, 3);
        let before = gains_of(&s, &[12, 5, 3]);
        let after = gains_of(&s, &[11, 6, 3]);
        assert!(after[0] < before[0]);
        assert!(after[1] > before[1]);
        assert_eq!(after[2], before[2]);
    }

    #[test]
    fn split_layout_keeps_users_in_their_half() {
        let mut solved = 0;
        for seed in 0..12 {
            let s = scsi(20, 2, 2, 1.0, seed);
            let c = cfg(4, 1.0);
            let layout = PoolLayout::split(20, &s.regions).unwrap();
            // every pooled count vector, by enumeration
            let any = compositions(20, 4).into_iter().any(|counts| {
                let fits = (0..2).all(|p| (0..4).filter(|&u| layout.pool_of[u] == p).map(|u| counts[u]).sum::<usize>() == 10);
                fits && feasible(&s, &c, &counts).is_some()
            });
            match optimize_partition_in(&s, &c, &layout) {
                Ok(sol) => {
                    solved += 1;
                    for (k, r) in sol.partition.index_ranges.iter().enumerate() {
                        let half = &layout.pools[layout.pool_of[k]];
                        assert!(r.start >= half.start && r.end <= half.end);
                    }
                }
                Err(_) => assert!(!any, "seed {seed}: a feasible split partition exists"),
            }
        }
        assert!(solved > 0);
        let s = scsi(20, 2, 2, 1.0, 0);
        assert!(PoolLayout::split(21, &s.regions).is_err());
        assert!(PoolLayout::split(20, &[Region::Transmission; 4]).is_err());
    }

    #[test]
    fn short_term_examples() {
        let s = scsi(12, 1, 0, 1.0, 5);
        let part = SurfacePartition::contiguous(&[12], &s.regions).unwrap();
        let real = sample_channels_seeded(&s, 8);
        let c = cfg(1, 1.0);
        let blk = short_term_pte(&real, &part, &c).unwrap();
        assert!((blk.report.sum_adjusted - blk.realized.sum_adjusted).abs() < 1e-9 * blk.report.sum_adjusted);
        let f = 1.0 - 13.0 / 400.0;
        assert!((blk.report.per_user_adjusted[0] - f * blk.report.per_user_rate[0]).abs() < 1e-12);

        let s = scsi(12, 2, 1, 1.0, 5);
        let part = SurfacePartition::contiguous(&[8, 3, 1], &s.regions).unwrap();
        let real = sample_channels_seeded(&s, 8);
        let blk = short_term_pte(&real, &part, &cfg(3, 0.5)).unwrap();
        if blk.allocation.feasible {
            for u in 1..3 {
                assert!((blk.report.per_user_rate[u] - 0.5).abs() < 1e-9);
            }
        }
    }
}
