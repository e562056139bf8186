use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{cr_noma_bte, cr_noma_pte, fdma_rates, tdma_rates};
use crate::bte::{optimize_long_term_with, short_term_bte, BteIterate, BteOptions, BteSolution};
use crate::channel::{
    derive_statistical_csi, drop_users, effective_channel, sample_channels, stream_rng, ChannelRealization, Point3, Region,
    StatisticalCsi,
};
use crate::coefficients::{partition_to_coefficients, StarCoefficients, SurfacePartition};
use crate::error::{CoreError, Result};
use crate::noma::{adjusted_rates, decoding_order, sic_rates, NomaConfig, RateReport};
use crate::pte::{approximate_gains, optimize_partition, optimize_partition_from, short_term_pte, PartitionSearchState, PteSolution};
use crate::stats::{expected_gains_bte, expected_rate_bte};

use super::config::{ExperimentConfig, Scheme};

/// Aggregate of one scheme at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub scheme: Scheme,
    pub sweep_value: f64,
    /// Mean overhead-adjusted sum-rate in bps/Hz; outage blocks count as 0.
    pub mean_sum_rate: f64,
    pub outage_frac: f64,
    pub per_user_rates: Vec<f64>,
    /// Approximate expected sum-rate of the long-term design.
    pub design_sum_rate: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub scheme: Scheme,
    pub sweep_value: f64,
    pub geometry: usize,
    pub reason: String,
}

/// Drop of one geometry, path losses in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub index: usize,
    pub user_positions: Vec<Point3>,
    pub user_regions: Vec<Region>,
    pub delta_bs_db: f64,
    pub delta_sk_db: Vec<f64>,
    pub delta_k_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOutput {
    pub results: Vec<TrialResult>,
    pub skipped: Vec<SkippedPoint>,
    pub geometries: Vec<GeometryRecord>,
}

const GEOMETRY_STREAM: u64 = u64::MAX;

fn trial_stream(geometry: usize, trial: usize) -> u64 {
    ((geometry as u64) << 32) | trial as u64
}

/// Users of geometry `index`, sorted into decoding order.
pub fn draw_geometry(cfg: &ExperimentConfig, index: usize) -> Result<crate::channel::SystemGeometry> {
    let mut rng = stream_rng(cfg.master_seed, GEOMETRY_STREAM - index as u64);
    let geo = drop_users(cfg.bs_position, cfg.ris_position, cfg.radius, (cfg.k_t, cfg.k_r), rng.random())?;
    geo.reordered(&decoding_order(&geo)?)
}

fn scenario(cfg: &ExperimentConfig, index: usize) -> Result<StatisticalCsi> {
    let geo = draw_geometry(cfg, index)?;
    derive_statistical_csi(&geo, &cfg.path_loss(), cfg.kappa1, cfg.kappa2, cfg.num_elements)
}

fn geometry_record(cfg: &ExperimentConfig, index: usize) -> Result<GeometryRecord> {
    let geo = draw_geometry(cfg, index)?;
    let scsi = derive_statistical_csi(&geo, &cfg.path_loss(), cfg.kappa1, cfg.kappa2, 0)?;
    let db = |x: f64| 10.0 * x.log10();
    Ok(GeometryRecord {
        index,
        user_positions: geo.user_positions,
        user_regions: geo.user_regions,
        delta_bs_db: db(scsi.delta_bs),
        delta_sk_db: scsi.delta_sk.iter().map(|&x| db(x)).collect(),
        delta_k_db: scsi.delta_k.iter().map(|&x| db(x)).collect(),
    })
}

/// Long-term outcome of one scheme.
#[derive(Debug, Clone)]
enum Design {
    Coefficients(StarCoefficients),
    Partition(SurfacePartition),
    Orthogonal(SurfacePartition),
    TimeSlots,
}

fn bte_options(cfg: &ExperimentConfig) -> BteOptions {
    BteOptions { seed: cfg.master_seed, ..BteOptions::default() }
}

/// STAR design that is never worse than the split-surface one: the split
/// design is feasible for the full surface, so it also seeds a second run.
fn star_bte(scsi: &StatisticalCsi, cfg: &ExperimentConfig, noma: &NomaConfig, cr: Option<&BteSolution>) -> Result<BteSolution> {
    let opts = bte_options(cfg);
    let first = optimize_long_term_with(scsi, noma, &cfg.penalty, None, &opts);
    let Some(cr) = cr else { return first };
    let mut best = first.ok();
    if best.as_ref().is_none_or(|b| b.expected_sum_rate < cr.expected_sum_rate) {
        if let Ok(warm) = optimize_long_term_with(scsi, noma, &cfg.penalty, Some(&cr.coeffs), &opts) {
            if best.as_ref().is_none_or(|b| warm.expected_sum_rate > b.expected_sum_rate) {
                best = Some(warm);
            }
        }
    }
    match best {
        Some(b) if b.expected_sum_rate >= cr.expected_sum_rate => Ok(b),
        _ => Ok(cr.clone()),
    }
}

fn star_pte(scsi: &StatisticalCsi, noma: &NomaConfig, cr: Option<&PteSolution>) -> Result<PteSolution> {
    let first = optimize_partition(scsi, noma);
    let Some(cr) = cr else { return first };
    match first {
        Ok(f) if f.expected_sum_rate >= cr.expected_sum_rate => Ok(f),
        _ => optimize_partition_from(scsi, noma, &cr.partition.counts),
    }
}

struct PointDesigns {
    designs: Vec<(Scheme, Design, f64)>,
    skipped: Vec<(Scheme, String)>,
}

fn design_point(scsi: &StatisticalCsi, cfg: &ExperimentConfig) -> PointDesigns {
    let noma = cfg.noma();
    let has = |s: Scheme| cfg.schemes.contains(&s);
    let mut skipped = Vec::new();
    let mut designs = Vec::new();

    let cr_bte = has(Scheme::CrNomaBte).then(|| cr_noma_bte(scsi, &noma, &cfg.penalty, &bte_options(cfg)));
    let cr_pte = has(Scheme::CrNomaPte).then(|| cr_noma_pte(scsi, &noma));
    let bte = has(Scheme::Bte).then(|| star_bte(scsi, cfg, &noma, cr_bte.as_ref().and_then(|r| r.as_ref().ok())));
    let pte = (has(Scheme::Pte) || has(Scheme::Fdma)).then(|| star_pte(scsi, &noma, cr_pte.as_ref().and_then(|r| r.as_ref().ok())));

    for scheme in &cfg.schemes {
        let coeffs = |r: &Option<Result<BteSolution>>| match r.as_ref().expect("computed above") {
            Ok(s) => Ok((Design::Coefficients(s.coeffs.clone()), s.expected_sum_rate)),
            Err(e) => Err(e.to_string()),
        };
        let partition = |r: &Option<Result<PteSolution>>, orthogonal: bool| match r.as_ref().expect("computed above") {
            Ok(s) if orthogonal => Ok((Design::Orthogonal(s.partition.clone()), f64::NAN)),
            Ok(s) => Ok((Design::Partition(s.partition.clone()), s.expected_sum_rate)),
            Err(e) => Err(e.to_string()),
        };
        let outcome: std::result::Result<(Design, f64), String> = match scheme {
            Scheme::Bte => coeffs(&bte),
            Scheme::CrNomaBte => coeffs(&cr_bte),
            Scheme::Pte => partition(&pte, false),
            Scheme::CrNomaPte => partition(&cr_pte, false),
            Scheme::Fdma => partition(&pte, true),
            Scheme::Tdma => Ok((Design::TimeSlots, f64::NAN)),
        };
        match outcome {
            Ok((d, rate)) => designs.push((*scheme, d, rate)),
            Err(e) => skipped.push((*scheme, e)),
        }
    }
    PointDesigns { designs, skipped }
}

fn block_report(design: &Design, real: &ChannelRealization, scsi: &StatisticalCsi, noma: &NomaConfig) -> Result<RateReport> {
    match design {
        Design::Coefficients(c) => Ok(short_term_bte(real, c, &scsi.regions, noma)?.1),
        Design::Partition(p) => Ok(short_term_pte(real, p, noma)?.realized),
        Design::Orthogonal(p) => fdma_rates(real, p, noma),
        Design::TimeSlots => tdma_rates(real, &scsi.regions, noma),
    }
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    sum: f64,
    per_user: Vec<f64>,
    outages: usize,
    trials: usize,
    design_rate: f64,
    designs: usize,
    /// Geometries without a long-term design.
    lost: usize,
}

impl Accumulator {
    fn add(&mut self, r: &RateReport) {
        if self.per_user.is_empty() {
            self.per_user = vec![0.0; r.per_user_adjusted.len()];
        }
        self.sum += r.sum_adjusted;
        for (a, b) in self.per_user.iter_mut().zip(&r.per_user_adjusted) {
            *a += b;
        }
        self.outages += r.outage as usize;
        self.trials += 1;
    }
}

fn run_point(cfg: &ExperimentConfig, value: f64) -> Result<(Vec<TrialResult>, Vec<SkippedPoint>)> {
    let at = cfg.at(value);
    at.validate()?;
    let noma = at.noma();
    let mut acc: Vec<(Scheme, Accumulator)> = cfg.schemes.iter().map(|s| (*s, Accumulator::default())).collect();
    let mut skipped = Vec::new();
    for g in 0..cfg.geometries {
        let scsi = scenario(&at, g)?;
        let point = design_point(&scsi, &at);
        for (scheme, _) in &point.skipped {
            acc.iter_mut().find(|(s, _)| s == scheme).expect("scheme listed").1.lost += 1;
        }
        skipped.extend(point.skipped.into_iter().map(|(scheme, reason)| SkippedPoint { scheme, sweep_value: value, geometry: g, reason }));
        if point.designs.is_empty() {
            continue;
        }
        let reports = (0..cfg.n_trials)
            .into_par_iter()
            .map(|t| {
                let real = sample_channels(&scsi, &mut stream_rng(cfg.master_seed, trial_stream(g, t)));
                point.designs.iter().map(|(_, d, _)| block_report(d, &real, &scsi, &noma)).collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, (scheme, _, rate)) in point.designs.iter().enumerate() {
            let a = &mut acc.iter_mut().find(|(s, _)| s == scheme).expect("scheme listed").1;
            for block in &reports {
                a.add(&block[i]);
            }
            a.design_rate += rate;
            a.designs += 1;
        }
    }
    let results = acc
        .into_iter()
        .filter(|(_, a)| a.designs > 0)
        .map(|(scheme, mut a)| {
            // drops without a design count as outage in every block
            a.trials += a.lost * cfg.n_trials;
            a.outages += a.lost * cfg.n_trials;
            let n = a.trials as f64;
            TrialResult {
                scheme,
                sweep_value: value,
                mean_sum_rate: a.sum / n,
                outage_frac: a.outages as f64 / n,
                per_user_rates: a.per_user.iter().map(|x| x / n).collect(),
                design_sum_rate: a.design_rate / a.designs as f64,
                trials: a.trials,
            }
        })
        .collect();
    Ok((results, skipped))
}

/// Long-term designs once per geometry and sweep point, then `n_trials`
/// short-term blocks each. All schemes see the same channel draws.
pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<MonteCarloOutput> {
    cfg.validate()?;
    let points = cfg.sweep_points();
    let per_point = points.par_iter().map(|&v| run_point(cfg, v)).collect::<Result<Vec<_>>>()?;
    let mut results = Vec::new();
    let mut skipped = Vec::new();
    for (r, s) in per_point {
        results.extend(r);
        skipped.extend(s);
    }
    let geometries = (0..cfg.geometries).map(|g| geometry_record(cfg, g)).collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloOutput { results, skipped, geometries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BteTrace {
    pub iterates: Vec<BteIterate>,
    pub final_violation: f64,
    pub outer_loops: usize,
    pub expected_sum_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub sweep_value: f64,
    pub bte: Option<BteTrace>,
    pub pte: Option<Vec<PartitionSearchState>>,
    pub skipped: Vec<SkippedPoint>,
}

/// Iterates of both long-term algorithms on geometry 0 of every sweep point.
pub fn run_convergence_trace(cfg: &ExperimentConfig) -> Result<Vec<ConvergenceTrace>> {
    cfg.validate()?;
    cfg.sweep_points()
        .par_iter()
        .map(|&value| {
            let at = cfg.at(value);
            at.validate()?;
            let scsi = scenario(&at, 0)?;
            let noma = at.noma();
            let mut skipped = Vec::new();
            let mut skip = |scheme, e: CoreError| skipped.push(SkippedPoint { scheme, sweep_value: value, geometry: 0, reason: e.to_string() });
            let bte = if cfg.schemes.contains(&Scheme::Bte) {
                match optimize_long_term_with(&scsi, &noma, &at.penalty, None, &bte_options(&at)) {
                    Ok(s) => Some(BteTrace {
                        final_violation: s.final_violation,
                        outer_loops: s.outer_loops,
                        expected_sum_rate: s.expected_sum_rate,
                        iterates: s.trace,
                    }),
                    Err(e) => {
                        skip(Scheme::Bte, e);
                        None
                    }
                }
            } else {
                None
            };
            let pte = if cfg.schemes.contains(&Scheme::Pte) {
                match optimize_partition(&scsi, &noma) {
                    Ok(s) => Some(s.trace),
                    Err(e) => {
                        skip(Scheme::Pte, e);
                        None
                    }
                }
            } else {
                None
            };
            Ok(ConvergenceTrace { sweep_value: value, bte, pte, skipped })
        })
        .collect()
}

/// Closed form against its Monte-Carlo estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub sweep_value: f64,
    pub quantity: String,
    pub user: Option<usize>,
    pub closed_form: f64,
    pub monte_carlo: f64,
    /// `(closed_form − monte_carlo) / monte_carlo`
    pub relative_gap: f64,
}

fn record(sweep_value: f64, quantity: &str, user: Option<usize>, closed_form: f64, monte_carlo: f64) -> AuditRecord {
    AuditRecord {
        sweep_value,
        quantity: quantity.to_string(),
        user,
        closed_form,
        monte_carlo,
        relative_gap: (closed_form - monte_carlo) / monte_carlo,
    }
}

/// Adjusted SIC sum-rate of one block at the long-term reference powers.
fn fixed_power_sum_rate(gains: &[f64], p: &[f64], cfg: &NomaConfig, overhead: f64) -> Result<f64> {
    let raw = sic_rates(gains, p, cfg.sigma2)?;
    Ok(adjusted_rates(&raw, overhead, cfg.t_coherence)?.sum_adjusted)
}

/// Column means of per-sample rows, summed in a fixed order.
fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut out = vec![0.0; rows.first().map_or(0, |r| r.len())];
    for r in rows {
        for (o, x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
    out.iter().map(|x| x / n).collect()
}

fn audit_point(cfg: &ExperimentConfig, value: f64) -> Result<Vec<AuditRecord>> {
    let at = cfg.at(value);
    at.validate()?;
    let scsi = scenario(&at, 0)?;
    let noma = at.noma();
    let k = scsi.num_users();
    let n = cfg.audit_samples.max(1);
    let draw = |t: usize| sample_channels(&scsi, &mut stream_rng(cfg.master_seed, trial_stream(1 << 20, t)));
    let mut out = Vec::new();

    if let Ok(sol) = optimize_long_term_with(&scsi, &noma, &at.penalty, None, &bte_options(&at)) {
        let c = &sol.coeffs;
        let closed = expected_gains_bte(&scsi, &c.v_t, &c.v_r);
        let rows = (0..n)
            .into_par_iter()
            .map(|t| {
                let real = draw(t);
                let mut row = (0..k)
                    .map(|u| effective_channel(&real, &c.v_t, &c.v_r, u, scsi.regions[u]).map(|z| z.norm_sqr()))
                    .collect::<Result<Vec<f64>>>()?;
                let fixed = fixed_power_sum_rate(&row, &sol.reference_powers, &noma, k as f64)?;
                row.push(short_term_bte(&real, c, &scsi.regions, &noma)?.1.sum_adjusted);
                row.push(fixed);
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        let mc = column_means(&rows);
        for u in 0..k {
            out.push(record(value, "bte_gain", Some(u), closed[u], mc[u]));
        }
        let approx: f64 = expected_rate_bte(&closed, &sol.reference_powers, noma.sigma2, noma.t_coherence).iter().sum();
        out.push(record(value, "bte_sum_rate", None, approx, mc[k]));
        out.push(record(value, "bte_sum_rate_fixed_power", None, approx, mc[k + 1]));
    }

    if let Ok(sol) = optimize_partition(&scsi, &noma) {
        let part = &sol.partition;
        let rows = (0..n)
            .into_par_iter()
            .map(|t| {
                let real = draw(t);
                let blk = short_term_pte(&real, part, &noma)?;
                let coeffs = partition_to_coefficients(part, &blk.phases)?;
                let mut row = approximate_gains(&real, part)?;
                for u in 0..k {
                    row.push(effective_channel(&real, &coeffs.v_t, &coeffs.v_r, u, part.modes[u])?.norm_sqr());
                }
                let overhead = (scsi.num_elements() + k) as f64;
                let fixed = fixed_power_sum_rate(&row[..k], &sol.reference_powers, &noma, overhead)?;
                row.push(blk.report.sum_adjusted);
                row.push(blk.realized.sum_adjusted);
                row.push(fixed);
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        let mc = column_means(&rows);
        for u in 0..k {
            out.push(record(value, "pte_gain", Some(u), sol.expected_gains[u], mc[u]));
        }
        for u in 0..k {
            out.push(record(value, "pte_gain_realized", Some(u), sol.expected_gains[u], mc[k + u]));
        }
        out.push(record(value, "pte_sum_rate_own", None, sol.expected_sum_rate, mc[2 * k]));
        out.push(record(value, "pte_sum_rate", None, sol.expected_sum_rate, mc[2 * k + 1]));
        out.push(record(value, "pte_sum_rate_fixed_power", None, sol.expected_sum_rate, mc[2 * k + 2]));
    }
    Ok(out)
}

/// Closed-form gains and rates of both protocols against simulation, on
/// geometry 0 of every sweep point.
pub fn run_approximation_audit(cfg: &ExperimentConfig) -> Result<Vec<AuditRecord>> {
    cfg.validate()?;
    let per_point = cfg.sweep_points().par_iter().map(|&v| audit_point(cfg, v)).collect::<Result<Vec<_>>>()?;
    Ok(per_point.into_iter().flatten().collect())
}
