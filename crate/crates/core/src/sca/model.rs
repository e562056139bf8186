//! Assembly and solution of the convex subproblem around an anchor point.
//!
//! Gains are handled in units of the noise power and every constraint is
//! normalized to be of order one at the anchor.

use std::f64::consts::LN_2;

use crate::channel::{inner, Region, StatisticalCsi, C64};
use crate::error::{CoreError, Result};
use crate::noma::NomaConfig;
use crate::stats::BteExpectationParams;

use super::ipm::{Concave, ElementBlock, IpmOptions, Objective, Problem, SolveStatus};
use super::surrogates::{surrogate_f0, MinorantForm};

/// Allowed operating modes per element, indexed by [`Region::index`].
pub type ModeMask = Vec<[bool; 2]>;

/// Linearization point of the subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorPoint {
    pub v_t_tilde: Vec<C64>,
    pub v_r_tilde: Vec<C64>,
    pub chi_tilde: Vec<f64>,
}

impl AnchorPoint {
    fn region(&self, s: Region) -> &[C64] {
        match s {
            Region::Transmission => &self.v_t_tilde,
            Region::Reflection => &self.v_r_tilde,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubproblemOptions {
    /// Absolute decoding-order margin in linear gain; `None` uses `1e-9·δ` of user 0.
    pub order_margin: Option<f64>,
    pub form: MinorantForm,
    /// `None` lets every element use both modes.
    pub mode_mask: Option<ModeMask>,
}

/// Variable layout: per element one `[re, im, t]` triple per allowed mode,
/// then one `χ` per user.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    offsets: Vec<usize>,
    slots: Vec<[Option<usize>; 2]>,
    chi_start: usize,
    n: usize,
}

impl Layout {
    fn new(mask: &[[bool; 2]], num_chi: usize) -> Self {
        let mut offsets = Vec::with_capacity(mask.len());
        let mut slots = Vec::with_capacity(mask.len());
        let mut next = 0;
        for allowed in mask {
            offsets.push(next);
            let mut slot = [None, None];
            for s in 0..2 {
                if allowed[s] {
                    slot[s] = Some(next);
                    next += 3;
                }
            }
            slots.push(slot);
        }
        Layout { offsets, slots, chi_start: next, n: next + num_chi }
    }

    fn num_elements(&self) -> usize {
        self.slots.len()
    }

    fn slot(&self, m: usize, s: Region) -> Option<usize> {
        self.slots[m][s.index()]
    }

    fn blocks(&self) -> Vec<ElementBlock> {
        self.offsets
            .iter()
            .zip(&self.slots)
            .map(|(&start, slot)| ElementBlock { start, modes: slot.iter().flatten().count() })
            .filter(|b| b.modes > 0)
            .collect()
    }

    /// Coefficients of `x ↦ Re(c^H v_s)` and `x ↦ Im(c^H v_s)`.
    fn re_im(&self, c: &[C64], s: Region) -> (Vec<f64>, Vec<f64>) {
        let mut re = vec![0.0; self.n];
        let mut im = vec![0.0; self.n];
        for (m, cm) in c.iter().enumerate() {
            if let Some(o) = self.slot(m, s) {
                re[o] = cm.re;
                re[o + 1] = cm.im;
                im[o] = -cm.im;
                im[o + 1] = cm.re;
            }
        }
        (re, im)
    }

    /// Real and imaginary indices of every active coefficient of mode `s`.
    fn squares(&self, s: Region) -> Vec<usize> {
        (0..self.num_elements())
            .filter_map(|m| self.slot(m, s))
            .flat_map(|o| [o, o + 1])
            .collect()
    }

    fn pack(&self, v_t: &[C64], v_r: &[C64], chi: &[f64], shrink: f64) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for m in 0..self.num_elements() {
            for (s, v) in [(Region::Transmission, v_t), (Region::Reflection, v_r)] {
                if let Some(o) = self.slot(m, s) {
                    let z = v[m] * shrink;
                    x[o] = z.re;
                    x[o + 1] = z.im;
                    x[o + 2] = z.norm() + 1e-3;
                }
            }
        }
        x[self.chi_start..].copy_from_slice(chi);
        x
    }

    fn unpack(&self, x: &[f64]) -> (Vec<C64>, Vec<C64>, Vec<f64>) {
        let m = self.num_elements();
        let mut v_t = vec![C64::new(0.0, 0.0); m];
        let mut v_r = vec![C64::new(0.0, 0.0); m];
        for i in 0..m {
            if let Some(o) = self.slot(i, Region::Transmission) {
                v_t[i] = C64::new(x[o], x[o + 1]);
            }
            if let Some(o) = self.slot(i, Region::Reflection) {
                v_r[i] = C64::new(x[o], x[o + 1]);
            }
        }
        (v_t, v_r, x[self.chi_start..self.n].to_vec())
    }
}

/// Linear pieces of one user's expected gain around the anchor, in noise units.
struct GainPieces {
    region: Region,
    delta: f64,
    epsilon: f64,
    zeta: f64,
    u_re: Vec<f64>,
    u_im: Vec<f64>,
    /// `|w̄^H ṽ|²`
    a2: f64,
    /// `Σ |ṽ_m|²`
    q2: f64,
    /// Coefficients of `2 Re(z̃^* w̄^H v)`.
    lin_a: Vec<f64>,
    /// Coefficients of `Σ 2 Re(ṽ_m^* v_m)`.
    lin_q: Vec<f64>,
    squares: Vec<usize>,
}

impl GainPieces {
    fn new(
        layout: &Layout,
        scsi: &StatisticalCsi,
        params: &BteExpectationParams,
        anchor: &[C64],
        user: usize,
        sigma2: f64,
    ) -> Self {
        let region = scsi.regions[user];
        let w = &scsi.w_los[user];
        let (u_re, u_im) = layout.re_im(w, region);
        let z = inner(w, anchor);
        let (vt_re, _) = layout.re_im(anchor, region);
        let lin_a = u_re.iter().zip(&u_im).map(|(r, i)| 2.0 * (z.re * r + z.im * i)).collect();
        let lin_q = vt_re.iter().map(|c| 2.0 * c).collect();
        GainPieces {
            region,
            delta: scsi.delta_k[user] / sigma2,
            epsilon: params.epsilon[user] / sigma2,
            zeta: params.zeta[user] / sigma2,
            u_re,
            u_im,
            a2: z.norm_sqr(),
            q2: anchor.iter().map(|v| v.norm_sqr()).sum(),
            lin_a,
            lin_q,
            squares: layout.squares(region),
        }
    }

    fn at_anchor(&self) -> f64 {
        self.delta + self.epsilon * self.a2 + self.zeta * self.q2
    }

    /// Adds `−weight · E(v)` to `c`.
    fn subtract_gain(&self, c: &mut Concave, weight: f64) {
        c.c0 -= weight * self.delta;
        if weight * self.epsilon > 0.0 {
            c.rank1.push((weight * self.epsilon, self.u_re.clone()));
            c.rank1.push((weight * self.epsilon, self.u_im.clone()));
        }
        if weight * self.zeta > 0.0 {
            c.diag.extend(self.squares.iter().map(|&i| (weight * self.zeta, i)));
        }
    }

    /// Affine minorant `f4` as `(constant, coefficients)`.
    fn minorant(&self) -> (f64, Vec<f64>) {
        let c0 = self.delta - self.epsilon * self.a2 - self.zeta * self.q2;
        let lin = self
            .lin_a
            .iter()
            .zip(&self.lin_q)
            .map(|(a, q)| self.epsilon * a + self.zeta * q)
            .collect();
        (c0, lin)
    }
}

fn check_anchor(scsi: &StatisticalCsi, v_t: &[C64], v_r: &[C64], mask: &[[bool; 2]]) -> Result<()> {
    let m = scsi.num_elements();
    if v_t.len() != m || v_r.len() != m || mask.len() != m {
        return Err(CoreError::invalid("anchor or mode mask does not match the surface size"));
    }
    for i in 0..m {
        if v_t[i].norm_sqr() + v_r[i].norm_sqr() > 1.0 + 1e-9 {
            return Err(CoreError::invalid(format!("anchor violates the energy constraint at element {i}")));
        }
        for (s, v) in [v_t[i], v_r[i]].into_iter().enumerate() {
            if !mask[i][s] && v.norm() > 0.0 {
                return Err(CoreError::invalid(format!("anchor uses a frozen mode at element {i}")));
            }
        }
    }
    Ok(())
}

fn default_margin(scsi: &StatisticalCsi) -> f64 {
    1e-9 * scsi.delta_k[0]
}

/// Decoding-order constraints `f4_k(v) − E_{k+1}(v) − margin >= 0`.
fn order_constraints(pieces: &[GainPieces], margin: f64, n: usize) -> Vec<Concave> {
    pieces
        .windows(2)
        .map(|w| {
            let (strong, weak) = (&w[0], &w[1]);
            let scale = weak.at_anchor();
            let (c0, lin) = strong.minorant();
            let mut c = Concave::new(n);
            c.c0 = c0 - margin;
            c.lin = lin;
            weak.subtract_gain(&mut c, 1.0);
            normalize(&mut c, scale);
            c
        })
        .collect()
}

fn normalize(c: &mut Concave, scale: f64) {
    c.c0 /= scale;
    c.lin.iter_mut().for_each(|v| *v /= scale);
    c.rank1.iter_mut().for_each(|(a, _)| *a /= scale);
    c.diag.iter_mut().for_each(|(b, _)| *b /= scale);
    c.recip.iter_mut().for_each(|(beta, _, _)| *beta /= scale);
}

/// Convex subproblem around one anchor point.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemModel {
    pub(crate) problem: Problem,
    pub(crate) layout: Layout,
    start: Vec<f64>,
    pub eta: f64,
    pub anchor: AnchorPoint,
    mask: ModeMask,
}

pub fn assemble(
    scsi: &StatisticalCsi,
    cfg: &NomaConfig,
    powers: &[f64],
    eta: f64,
    anchor: &AnchorPoint,
    opts: &SubproblemOptions,
) -> Result<SubproblemModel> {
    cfg.validate()?;
    let k = scsi.num_users();
    let m = scsi.num_elements();
    if cfg.num_users() != k || powers.len() != k || anchor.chi_tilde.len() != k {
        return Err(CoreError::invalid("powers, targets and anchor must cover every user"));
    }
    if powers.iter().any(|p| !(*p >= 0.0)) || !(eta >= 0.0) {
        return Err(CoreError::invalid("powers and penalty weight must be non-negative"));
    }
    if anchor.chi_tilde.iter().any(|c| !(*c > 0.0)) {
        return Err(CoreError::invalid("anchor SINR values must be positive"));
    }
    let mask = opts.mode_mask.clone().unwrap_or_else(|| vec![[true, true]; m]);
    check_anchor(scsi, &anchor.v_t_tilde, &anchor.v_r_tilde, &mask)?;

    let layout = Layout::new(&mask, k);
    let n = layout.n;
    let params = BteExpectationParams::new(scsi);
    let pieces: Vec<GainPieces> = (0..k)
        .map(|u| GainPieces::new(&layout, scsi, &params, anchor.region(scsi.regions[u]), u, cfg.sigma2))
        .collect();

    let mut constraints = Vec::new();
    let mut stronger = 0.0;
    for (u, g) in pieces.iter().enumerate() {
        let chi_t = anchor.chi_tilde[u];
        let chi_idx = layout.chi_start + u;
        let a = cfg.gamma[u].exp2() - 1.0;

        // rate target
        let mut c = Concave::new(n);
        c.lin[chi_idx] = 1.0;
        c.c0 = -a;
        normalize(&mut c, a.max(1.0));
        constraints.push(c);

        // SINR lower bound through the f1, f2, f3 minorants
        let p = powers[u];
        let scale = stronger * g.at_anchor() + 1.0;
        let mut c = Concave::new(n);
        c.c0 = 2.0 * p * g.delta / chi_t - 1.0;
        let squares: f64 = anchor
            .region(g.region)
            .iter()
            .map(|v| opts.form.chi_coefficient(v.norm_sqr(), chi_t))
            .sum();
        let chi_coef = g.delta / (chi_t * chi_t) + g.epsilon * opts.form.chi_coefficient(g.a2, chi_t) + g.zeta * squares;
        c.lin[chi_idx] = -p * chi_coef;
        for i in 0..layout.chi_start {
            c.lin[i] = p * (g.epsilon * g.lin_a[i] + g.zeta * g.lin_q[i]) / chi_t;
        }
        g.subtract_gain(&mut c, stronger);
        normalize(&mut c, scale);
        constraints.push(c);
        stronger += p;
    }
    let margin = opts.order_margin.unwrap_or_else(|| default_margin(scsi)) / cfg.sigma2;
    constraints.extend(order_constraints(&pieces, margin, n));

    let weight = eta * LN_2;
    let mut lin = vec![0.0; n];
    for i in 0..m {
        for s in [Region::Transmission, Region::Reflection] {
            if let Some(o) = layout.slot(i, s) {
                let vt = anchor.region(s)[i];
                lin[o] = -2.0 * weight * vt.re;
                lin[o + 1] = -2.0 * weight * vt.im;
                lin[o + 2] = weight;
            }
        }
    }
    let objective = Objective { lin, neg_log1p: (0..k).map(|u| (layout.chi_start + u, 1.0)).collect() };
    let problem = Problem { n, blocks: layout.blocks(), objective, constraints };

    let chi0: Vec<f64> = anchor.chi_tilde.iter().map(|c| c * (1.0 - 1e-6)).collect();
    let start = layout.pack(&anchor.v_t_tilde, &anchor.v_r_tilde, &chi0, 1.0 - 1e-8);
    Ok(SubproblemModel { problem, layout, start, eta, anchor: anchor.clone(), mask })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub v_t: Vec<C64>,
    pub v_r: Vec<C64>,
    pub chi: Vec<f64>,
    /// `Σ log2(1 + χ_k) − η Σ f0`, in bits.
    pub objective: f64,
    pub status: SolveStatus,
    /// Duality-gap bound at the returned point.
    pub kkt_residual: f64,
    pub newton_steps: usize,
}

impl SubproblemModel {
    pub fn num_variables(&self) -> usize {
        self.problem.n
    }

    pub fn num_constraints(&self) -> usize {
        self.problem.constraints.len()
    }

    /// Subproblem objective in bits at an arbitrary point.
    pub fn objective_at(&self, v_t: &[C64], v_r: &[C64], chi: &[f64]) -> f64 {
        let rate: f64 = chi.iter().map(|c| c.ln_1p() / LN_2).sum();
        let mut pen = 0.0;
        for (i, allowed) in self.mask.iter().enumerate() {
            if allowed[0] {
                pen += surrogate_f0(v_t[i], self.anchor.v_t_tilde[i]);
            }
            if allowed[1] {
                pen += surrogate_f0(v_r[i], self.anchor.v_r_tilde[i]);
            }
        }
        rate - self.eta * pen
    }

    pub fn anchor_objective(&self) -> f64 {
        self.objective_at(&self.anchor.v_t_tilde, &self.anchor.v_r_tilde, &self.anchor.chi_tilde)
    }

    /// Normalized values of all non-element constraints (feasible when all >= 0).
    pub fn constraint_values(&self, v_t: &[C64], v_r: &[C64], chi: &[f64]) -> Vec<f64> {
        let x = self.layout.pack(v_t, v_r, chi, 1.0);
        self.problem
            .constraints
            .iter()
            .map(|c| c.value(&x).unwrap_or(f64::NEG_INFINITY))
            .collect()
    }
}

pub fn solve(model: &SubproblemModel, tol: f64) -> SubproblemSolution {
    let opts = IpmOptions { tol, ..IpmOptions::default() };
    let r = model.problem.minimize(model.start.clone(), &opts);
    let (v_t, v_r, chi) = model.layout.unpack(&r.x);
    SubproblemSolution {
        objective: model.objective_at(&v_t, &v_r, &chi),
        v_t,
        v_r,
        chi,
        status: r.status,
        kkt_residual: r.gap,
        newton_steps: r.newton_steps,
    }
}

/// SCA phase I on the decoding-order and power-budget conditions: returns
/// coefficients for which the expected gains are strictly ordered and the
/// targets `a_k (1 + inflate)` are reachable within `p_max`.
pub(crate) fn restore_feasibility(
    scsi: &StatisticalCsi,
    cfg: &NomaConfig,
    v_t: &[C64],
    v_r: &[C64],
    mask: &[[bool; 2]],
    margin: f64,
    inflate: f64,
) -> Option<(Vec<C64>, Vec<C64>)> {
    check_anchor(scsi, v_t, v_r, mask).ok()?;
    let k = scsi.num_users();
    let layout = Layout::new(mask, 0);
    let n = layout.n;
    let params = BteExpectationParams::new(scsi);
    let a: Vec<f64> = cfg.gamma.iter().map(|g| (g.exp2() - 1.0) * (1.0 + inflate)).collect();
    let weights: Vec<f64> = (0..k)
        .map(|u| a[u] * a[u + 1..].iter().map(|x| 1.0 + x).product::<f64>() / cfg.p_max)
        .collect();

    let mut cur = (v_t.to_vec(), v_r.to_vec());
    let mut best_slack = f64::INFINITY;
    for _ in 0..40 {
        let region = |u: usize| match scsi.regions[u] {
            Region::Transmission => &cur.0,
            Region::Reflection => &cur.1,
        };
        let pieces: Vec<GainPieces> = (0..k)
            .map(|u| GainPieces::new(&layout, scsi, &params, region(u), u, cfg.sigma2))
            .collect();
        let mut constraints = order_constraints(&pieces, margin / cfg.sigma2, n);
        let mut budget = Concave::new(n);
        budget.c0 = 1.0;
        for (g, w) in pieces.iter().zip(&weights) {
            let (alpha, h) = g.minorant();
            budget.recip.push((*w, alpha, h));
        }
        constraints.push(budget);
        let problem = Problem {
            n,
            blocks: layout.blocks(),
            objective: Objective { lin: vec![0.0; n], neg_log1p: vec![] },
            constraints,
        };
        let x0 = layout.pack(&cur.0, &cur.1, &[], 1.0 - 1e-6);
        if problem.strictly_feasible(&x0) {
            let (t, r, _) = layout.unpack(&x0);
            return Some((t, r));
        }
        let (phase1, x1) = problem.phase_one(&x0);
        let res = phase1.barrier_solve(
            x1,
            &IpmOptions { early_stop: Some(-1e-3), ..IpmOptions::default() },
            Some(n),
        );
        let slack = res.x[n];
        let (t, r, _) = layout.unpack(&res.x[..n]);
        if slack < 0.0 {
            return Some((t, r));
        }
        if !(slack < best_slack - 1e-9) {
            return None;
        }
        best_slack = slack;
        cur = (t, r);
    }
    None
}
