//! Beamforming-then-estimate: long-term mode-switching coefficients from
//! statistical CSI, and the per-block power allocation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{effective_channel, stream_rng, ChannelRealization, Region, StatisticalCsi, C64};
use crate::coefficients::{validate, StarCoefficients};
use crate::error::{CoreError, Result};
use crate::noma::{adjusted_rates, optimal_power_allocation, sic_rates_unchecked, NomaConfig, PowerAllocation, RateReport};
use crate::sca::{self, penalty, restore_feasibility, AnchorPoint, MinorantForm, ModeMask, SolveStatus, SubproblemOptions};
use crate::stats::{expected_gains_bte, expected_rate_bte};

/// Margin on the strongest user's target at the anchor, so that every
/// subproblem has a strictly feasible interior.
const STRONG_MARGIN: f64 = 1e-5;
/// Bounds of the adaptive target inflation for the weaker users.
const INFLATION_MAX: f64 = 0.5;
const INFLATION_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySchedule {
    pub eta0: f64,
    pub omega: f64,
    pub epsilon: f64,
    pub n_max: usize,
    pub max_outer: usize,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        PenaltySchedule { eta0: 1e-4, omega: 10.0, epsilon: 1e-7, n_max: 20, max_outer: 15 }
    }
}

impl PenaltySchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0) || !(self.omega > 1.0) || !(self.epsilon > 0.0) {
            return Err(CoreError::invalid("penalty schedule needs eta0 > 0, omega > 1, epsilon > 0"));
        }
        if self.n_max == 0 || self.max_outer == 0 {
            return Err(CoreError::invalid("iteration limits must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BteOptions {
    pub solver_tol: f64,
    pub form: MinorantForm,
    /// Restricts elements to given modes; `None` is the full STAR surface.
    pub mode_mask: Option<ModeMask>,
    /// Random-phase restarts tried when the default start cannot be repaired.
    pub restarts: usize,
    pub seed: u64,
    /// Relative inner-loop improvement below which the inner loop stops.
    pub inner_tol: f64,
    /// Initial relative inflation of the weaker users' SINR targets when
    /// computing the anchor powers.
    pub inflation: f64,
}

impl Default for BteOptions {
    fn default() -> Self {
        BteOptions {
            solver_tol: 1e-8,
            form: MinorantForm::Conventional,
            mode_mask: None,
            restarts: 3,
            seed: 0,
            inner_tol: 1e-6,
            inflation: 0.05,
        }
    }
}

/// One accepted inner iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BteIterate {
    pub outer: usize,
    pub inner: usize,
    pub eta: f64,
    /// Penalized objective `Σ log2(1 + SINR_k) − η Σ (|v| − |v|²)`.
    pub objective: f64,
    /// Approximate expected sum-rate including the training overhead.
    pub sum_rate: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BteSolution {
    pub coeffs: StarCoefficients,
    pub reference_powers: Vec<f64>,
    pub expected_gains: Vec<f64>,
    /// Approximate expected sum-rate of the rounded solution.
    pub expected_sum_rate: f64,
    /// Binary violation right before rounding.
    pub final_violation: f64,
    pub outer_loops: usize,
    pub trace: Vec<BteIterate>,
}

impl BteSolution {
    /// Last iterate of every outer loop.
    pub fn outer_summary(&self) -> Vec<BteIterate> {
        let mut out: Vec<BteIterate> = Vec::new();
        for it in &self.trace {
            match out.last_mut() {
                Some(last) if last.outer == it.outer => *last = *it,
                _ => out.push(*it),
            }
        }
        out
    }
}

/// Mask with the first half of the elements transmit-only and the second
/// half reflect-only.
pub fn conventional_ris_mask(num_elements: usize) -> Result<ModeMask> {
    if !num_elements.is_multiple_of(2) {
        return Err(CoreError::invalid("the split surface needs an even number of elements"));
    }
    Ok((0..num_elements)
        .map(|m| if m < num_elements / 2 { [true, false] } else { [false, true] })
        .collect())
}

/// Targets with linear SINR scaled by `1 + strong` for user 0 and `1 + weak`
/// for the others.
fn inflated(cfg: &NomaConfig, strong: f64, weak: f64) -> NomaConfig {
    let gamma = cfg
        .gamma
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let f = if k == 0 { 1.0 + strong } else { 1.0 + weak };
            ((g.exp2() - 1.0) * f).ln_1p() / std::f64::consts::LN_2
        })
        .collect();
    NomaConfig { gamma, ..cfg.clone() }
}

/// Powers at which the next subproblem is linearized: the closed-form
/// allocation for slightly inflated targets, so the weaker users' gains may
/// move in the subproblem.
fn anchor_powers(gains: &[f64], cfg: &NomaConfig, weak: f64) -> Option<Vec<f64>> {
    if !strictly_ordered(gains) {
        return None;
    }
    let alloc = optimal_power_allocation(gains, &inflated(cfg, STRONG_MARGIN, weak));
    alloc.feasible.then_some(alloc.p)
}

fn strictly_ordered(gains: &[f64]) -> bool {
    gains.windows(2).all(|w| w[0] > w[1])
}

fn sinr(gains: &[f64], p: &[f64], sigma2: f64) -> Vec<f64> {
    let mut stronger = 0.0;
    gains
        .iter()
        .zip(p)
        .map(|(&g, &pk)| {
            let s = pk * g / (stronger * g + sigma2);
            stronger += pk;
            s
        })
        .collect()
}

fn max_violation(v_t: &[C64], v_r: &[C64], mask: &[[bool; 2]]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, allowed) in mask.iter().enumerate() {
        if allowed[0] {
            worst = worst.max(penalty(v_t[i]));
        }
        if allowed[1] {
            worst = worst.max(penalty(v_r[i]));
        }
    }
    worst
}

struct Evaluation {
    objective: f64,
    sum_rate: f64,
    violation: f64,
    gains: Vec<f64>,
}

fn evaluate(scsi: &StatisticalCsi, cfg: &NomaConfig, v_t: &[C64], v_r: &[C64], eta: f64, mask: &[[bool; 2]]) -> Option<Evaluation> {
    let gains = expected_gains_bte(scsi, v_t, v_r);
    if !strictly_ordered(&gains) {
        return None;
    }
    let alloc = optimal_power_allocation(&gains, cfg);
    if !alloc.feasible {
        return None;
    }
    let raw = sic_rates_unchecked(&gains, &alloc.p, cfg.sigma2);
    let mut pen = 0.0;
    for (i, allowed) in mask.iter().enumerate() {
        if allowed[0] {
            pen += penalty(v_t[i]);
        }
        if allowed[1] {
            pen += penalty(v_r[i]);
        }
    }
    Some(Evaluation {
        objective: raw.iter().sum::<f64>() - eta * pen,
        sum_rate: expected_rate_bte(&gains, &alloc.p, cfg.sigma2, cfg.t_coherence).iter().sum(),
        violation: max_violation(v_t, v_r, mask),
        gains,
    })
}

/// Amplitudes `√½` in every allowed mode, phases co-phased with the cascaded
/// LoS channel of the strongest user in that mode's region.
pub fn default_initial_point(scsi: &StatisticalCsi, mask: &[[bool; 2]]) -> StarCoefficients {
    let m = scsi.num_elements();
    let amp = std::f64::consts::FRAC_1_SQRT_2;
    let lead = |s: Region| scsi.regions.iter().position(|r| *r == s);
    let mut out = [vec![C64::new(0.0, 0.0); m], vec![C64::new(0.0, 0.0); m]];
    for s in [Region::Transmission, Region::Reflection] {
        for i in 0..m {
            if mask[i][s.index()] {
                let phase = lead(s).map(|k| scsi.w_los[k][i].arg()).unwrap_or(0.0);
                out[s.index()][i] = C64::from_polar(amp, phase);
            }
        }
    }
    let [v_t, v_r] = out;
    StarCoefficients { v_t, v_r }
}

/// Phases of the region lead's LoS vector with the other same-region users'
/// LoS directions projected out, on the modes in `active`.
fn nulled_point(scsi: &StatisticalCsi, mask: &[[bool; 2]], active: [bool; 2]) -> StarCoefficients {
    let m = scsi.num_elements();
    let mut out = [vec![C64::new(0.0, 0.0); m], vec![C64::new(0.0, 0.0); m]];
    for s in [Region::Transmission, Region::Reflection] {
        let users: Vec<usize> = (0..scsi.num_users()).filter(|&u| scsi.regions[u] == s).collect();
        let Some((&lead, rest)) = users.split_first() else { continue };
        // Gram-Schmidt basis of the weaker users' directions
        let mut basis: Vec<Vec<C64>> = Vec::new();
        for &u in rest {
            let mut b = scsi.w_los[u].clone();
            for q in &basis {
                let c: C64 = q.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
                b.iter_mut().zip(q).for_each(|(y, x)| *y -= c * x);
            }
            let norm = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > 1e-9 {
                b.iter_mut().for_each(|z| *z /= norm);
                basis.push(b);
            }
        }
        let mut d = scsi.w_los[lead].clone();
        for q in &basis {
            let c: C64 = q.iter().zip(&d).map(|(x, y)| x.conj() * y).sum();
            d.iter_mut().zip(q).for_each(|(y, x)| *y -= c * x);
        }
        for i in 0..m {
            let on = |t: usize| active[t] && mask[i][t];
            if on(s.index()) {
                let amp = if on(1 - s.index()) { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
                out[s.index()][i] = C64::from_polar(amp, d[i].arg());
            }
        }
    }
    let [v_t, v_r] = out;
    StarCoefficients { v_t, v_r }
}

fn feasible_start(
    scsi: &StatisticalCsi,
    cfg: &NomaConfig,
    init: &StarCoefficients,
    mask: &[[bool; 2]],
    margin: f64,
) -> Option<StarCoefficients> {
    let gains = expected_gains_bte(scsi, &init.v_t, &init.v_r);
    if anchor_powers(&gains, cfg, INFLATION_MIN).is_some() {
        return Some(init.clone());
    }
    let (v_t, v_r) = restore_feasibility(scsi, cfg, &init.v_t, &init.v_r, mask, margin, STRONG_MARGIN)?;
    let gains = expected_gains_bte(scsi, &v_t, &v_r);
    anchor_powers(&gains, cfg, INFLATION_MIN).map(|_| StarCoefficients { v_t, v_r })
}

pub fn optimize_long_term(
    scsi: &StatisticalCsi,
    cfg: &NomaConfig,
    sched: &PenaltySchedule,
    init: Option<&StarCoefficients>,
) -> Result<BteSolution> {
    optimize_long_term_with(scsi, cfg, sched, init, &BteOptions::default())
}

pub fn optimize_long_term_with(
    scsi: &StatisticalCsi,
    cfg: &NomaConfig,
    sched: &PenaltySchedule,
    init: Option<&StarCoefficients>,
    opts: &BteOptions,
) -> Result<BteSolution> {
    cfg.validate()?;
    sched.validate()?;
    let k = scsi.num_users();
    let m = scsi.num_elements();
    if cfg.num_users() != k {
        return Err(CoreError::invalid("rate targets do not match the number of users"));
    }
    if cfg.gamma.iter().any(|g| !(*g > 0.0)) {
        return Err(CoreError::invalid("long-term design needs positive rate targets"));
    }
    if (k as f64) >= cfg.t_coherence {
        return Err(CoreError::invalid("training overhead exceeds the coherence time"));
    }
    let mask = opts.mode_mask.clone().unwrap_or_else(|| vec![[true, true]; m]);
    if mask.len() != m {
        return Err(CoreError::invalid("mode mask does not match the surface size"));
    }
    // order margin relative to the largest gain any user could see, so that
    // rounding the final point cannot swap two tied users
    let peak = (0..k)
        .map(|u| (scsi.delta_k[u].sqrt() + m as f64 * (scsi.delta_bs * scsi.delta_sk[u]).sqrt()).powi(2))
        .fold(0.0, f64::max);
    let margin = 1e-5 * peak;

    let first = init.cloned().unwrap_or_else(|| default_initial_point(scsi, &mask));
    let mut start = feasible_start(scsi, cfg, &first, &mask, margin);
    for active in [[true, true], [false, true], [true, false]] {
        if start.is_some() {
            break;
        }
        start = feasible_start(scsi, cfg, &nulled_point(scsi, &mask, active), &mask, margin);
    }
    let mut rng = stream_rng(opts.seed, 0x5eed);
    for _ in 0..opts.restarts {
        if start.is_some() {
            break;
        }
        let mut guess = first.clone();
        for (i, allowed) in mask.iter().enumerate() {
            for (s, v) in [&mut guess.v_t, &mut guess.v_r].into_iter().enumerate() {
                if allowed[s] {
                    v[i] = C64::from_polar(std::f64::consts::FRAC_1_SQRT_2, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
                }
            }
        }
        start = feasible_start(scsi, cfg, &guess, &mask, margin);
    }
    let start = start.ok_or_else(|| CoreError::infeasible("no feasible initial coefficients for the rate targets"))?;

    let sub_opts = SubproblemOptions { order_margin: Some(margin), form: opts.form, mode_mask: Some(mask.clone()) };
    let (mut v_t, mut v_r) = (start.v_t, start.v_r);
    let mut eta = sched.eta0;
    let mut trace = Vec::new();
    let mut outer_loops = 0;
    let mut violation = max_violation(&v_t, &v_r, &mask);
    for outer in 0..sched.max_outer {
        outer_loops = outer + 1;
        let mut current = match evaluate(scsi, cfg, &v_t, &v_r, eta, &mask) {
            Some(e) => e,
            None => break,
        };
        if outer == 0 {
            trace.push(BteIterate { outer, inner: 0, eta, objective: current.objective, sum_rate: current.sum_rate, violation: current.violation });
        }
        let mut inflation = opts.inflation.clamp(INFLATION_MIN, INFLATION_MAX);
        'inner: for inner in 1..=sched.n_max {
            // shrink the inflation until a step improves the objective
            let (sol, next) = loop {
                if inflation < INFLATION_MIN {
                    break 'inner;
                }
                let Some(p) = anchor_powers(&current.gains, cfg, inflation) else {
                    inflation *= 0.25;
                    continue;
                };
                let chi_tilde = sinr(&current.gains, &p, cfg.sigma2);
                let anchor = AnchorPoint { v_t_tilde: v_t.clone(), v_r_tilde: v_r.clone(), chi_tilde };
                let model = sca::assemble(scsi, cfg, &p, eta, &anchor, &sub_opts)?;
                let sol = sca::solve(&model, opts.solver_tol);
                let next = (sol.status != SolveStatus::Infeasible)
                    .then(|| evaluate(scsi, cfg, &sol.v_t, &sol.v_r, eta, &mask))
                    .flatten();
                match next {
                    Some(n) if n.objective >= current.objective => break (sol, n),
                    _ => inflation *= 0.25,
                }
            };
            let gain = (next.objective - current.objective) / current.objective.abs().max(1.0);
            v_t = sol.v_t;
            v_r = sol.v_r;
            trace.push(BteIterate { outer, inner, eta, objective: next.objective, sum_rate: next.sum_rate, violation: next.violation });
            current = next;
            inflation = (2.0 * inflation).min(INFLATION_MAX);
            if gain < opts.inner_tol {
                break;
            }
        }
        violation = current.violation;
        if violation <= sched.epsilon {
            break;
        }
        eta *= sched.omega;
    }

    let coeffs = StarCoefficients { v_t, v_r }.round_to_binary();
    let coeffs = restrict(&coeffs, &mask);
    debug_assert!(validate(&coeffs, true).valid);
    let gains = expected_gains_bte(scsi, &coeffs.v_t, &coeffs.v_r);
    let alloc = optimal_power_allocation(&gains, cfg);
    if !(alloc.feasible && strictly_ordered(&gains)) {
        return Err(CoreError::infeasible("rounded coefficients miss the rate targets or the decoding order"));
    }
    let expected_sum_rate = expected_rate_bte(&gains, &alloc.p, cfg.sigma2, cfg.t_coherence).iter().sum();
    Ok(BteSolution {
        coeffs,
        reference_powers: alloc.p,
        expected_gains: gains,
        expected_sum_rate,
        final_violation: violation,
        outer_loops,
        trace,
    })
}

/// Rounding may pick a frozen mode for an element that is off in both; map
/// such elements back to their allowed mode.
fn restrict(c: &StarCoefficients, mask: &[[bool; 2]]) -> StarCoefficients {
    let mut out = c.clone();
    for (i, allowed) in mask.iter().enumerate() {
        if !allowed[0] && out.v_t[i].norm() > 0.0 {
            out.v_r[i] = out.v_t[i];
            out.v_t[i] = C64::new(0.0, 0.0);
        }
        if !allowed[1] && out.v_r[i].norm() > 0.0 {
            out.v_t[i] = out.v_r[i];
            out.v_r[i] = C64::new(0.0, 0.0);
        }
    }
    out
}

/// Per-block step: estimate effective channels, allocate power, report rates
/// with the `K`-symbol training overhead.
pub fn short_term_bte(
    real: &ChannelRealization,
    coeffs: &StarCoefficients,
    regions: &[Region],
    cfg: &NomaConfig,
) -> Result<(PowerAllocation, RateReport)> {
    let k = real.num_users();
    if regions.len() != k || cfg.num_users() != k {
        return Err(CoreError::invalid("regions and targets must cover every user"));
    }
    let gains = (0..k)
        .map(|u| effective_channel(real, &coeffs.v_t, &coeffs.v_r, u, regions[u]).map(|c| c.norm_sqr()))
        .collect::<Result<Vec<f64>>>()?;
    let alloc = optimal_power_allocation(&gains, cfg);
    let overhead = k as f64;
    if !alloc.feasible {
        if overhead >= cfg.t_coherence {
            return Err(CoreError::invalid("training overhead exceeds the coherence time"));
        }
        return Ok((alloc, RateReport::outage(k, overhead)));
    }
    let raw = sic_rates_unchecked(&gains, &alloc.p, cfg.sigma2);
    let report = adjusted_rates(&raw, overhead, cfg.t_coherence)?;
    Ok((alloc, report))
}
