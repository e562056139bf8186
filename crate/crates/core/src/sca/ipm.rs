//! Log-barrier interior-point solver for the structured convex programs
//! built by the SCA step.
//!
//! Variables are grouped into element blocks (a complex coefficient plus an
//! epigraph variable `t >= |v|` per operating mode, all under a unit energy
//! ball) followed by free scalar variables. Every other constraint is a
//! concave function made of an affine part, negative rank-one and diagonal
//! quadratics and negative reciprocals of affine functions. The Newton
//! matrix is then block diagonal plus low rank and is solved via Woodbury.

use nalgebra::{DMatrix, DVector};

/// One surface element: `modes` triples `[re, im, t]` starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ElementBlock {
    pub start: usize,
    pub modes: usize,
}

impl ElementBlock {
    pub fn len(&self) -> usize {
        3 * self.modes
    }
}

/// Concave constraint `c(x) >= 0` with
/// `c(x) = c0 + lin·x − Σ a (u·x)² − Σ b x_i² − Σ β / (α + h·x)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct Concave {
    pub c0: f64,
    pub lin: Vec<f64>,
    pub rank1: Vec<(f64, Vec<f64>)>,
    pub diag: Vec<(f64, usize)>,
    pub recip: Vec<(f64, f64, Vec<f64>)>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Concave {
    pub fn new(n: usize) -> Self {
        Concave { lin: vec![0.0; n], ..Default::default() }
    }

    /// Value, or `None` outside the domain of a reciprocal term.
    pub fn value(&self, x: &[f64]) -> Option<f64> {
        let mut v = self.c0 + dot(&self.lin, x);
        for (a, u) in &self.rank1 {
            v -= a * dot(u, x).powi(2);
        }
        for &(b, i) in &self.diag {
            v -= b * x[i] * x[i];
        }
        for (beta, alpha, h) in &self.recip {
            let aff = alpha + dot(h, x);
            if !(aff > 0.0) {
                return None;
            }
            v -= beta / aff;
        }
        Some(v)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.lin.clone();
        for (a, u) in &self.rank1 {
            let s = -2.0 * a * dot(u, x);
            g.iter_mut().zip(u).for_each(|(gi, ui)| *gi += s * ui);
        }
        for &(b, i) in &self.diag {
            g[i] -= 2.0 * b * x[i];
        }
        for (beta, alpha, h) in &self.recip {
            let aff = alpha + dot(h, x);
            let s = beta / (aff * aff);
            g.iter_mut().zip(h).for_each(|(gi, hi)| *gi += s * hi);
        }
        g
    }

    fn extend(&mut self, extra: usize) {
        let n = self.lin.len() + extra;
        self.lin.resize(n, 0.0);
        self.rank1.iter_mut().for_each(|(_, u)| u.resize(n, 0.0));
        self.recip.iter_mut().for_each(|(_, _, h)| h.resize(n, 0.0));
    }
}

/// `lin·x − Σ w ln(1 + x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Objective {
    pub lin: Vec<f64>,
    pub neg_log1p: Vec<(usize, f64)>,
}

impl Objective {
    fn value(&self, x: &[f64]) -> Option<f64> {
        let mut v = dot(&self.lin, x);
        for &(i, w) in &self.neg_log1p {
            if !(x[i] > -1.0) {
                return None;
            }
            v -= w * x[i].ln_1p();
        }
        Some(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Problem {
    pub n: usize,
    pub blocks: Vec<ElementBlock>,
    pub objective: Objective,
    pub constraints: Vec<Concave>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct IpmOptions {
    /// Relative duality-gap target.
    pub tol: f64,
    pub mu: f64,
    pub max_newton: usize,
    /// Phase I only: stop as soon as the slack drops below this value.
    pub early_stop: Option<f64>,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions { tol: 1e-8, mu: 10.0, max_newton: 600, early_stop: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct IpmResult {
    pub x: Vec<f64>,
    pub status: SolveStatus,
    pub objective: f64,
    /// Duality gap bound `m / t` at the returned point.
    pub gap: f64,
    pub newton_steps: usize,
}

// element barrier bookkeeping

fn element_domain(b: &ElementBlock, x: &[f64]) -> bool {
    let mut ball = 1.0;
    for j in 0..b.modes {
        let o = b.start + 3 * j;
        let (re, im, t) = (x[o], x[o + 1], x[o + 2]);
        if !(t > 0.0) || !(t * t - re * re - im * im > 0.0) {
            return false;
        }
        ball -= re * re + im * im;
    }
    ball > 0.0
}

fn element_barrier(b: &ElementBlock, x: &[f64]) -> f64 {
    let mut ball = 1.0;
    let mut v = 0.0;
    for j in 0..b.modes {
        let o = b.start + 3 * j;
        let (re, im, t) = (x[o], x[o + 1], x[o + 2]);
        v -= (t * t - re * re - im * im).ln();
        ball -= re * re + im * im;
    }
    v - ball.ln()
}

/// Gradient and Hessian of the element barrier, local coordinates.
fn element_derivatives(b: &ElementBlock, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let n = b.len();
    let mut g = vec![0.0; n];
    let mut h = DMatrix::zeros(n, n);
    let mut ball = 1.0;
    for j in 0..b.modes {
        let o = b.start + 3 * j;
        let (re, im, t) = (x[o], x[o + 1], x[o + 2]);
        let q = t * t - re * re - im * im;
        let dq = [-2.0 * re, -2.0 * im, 2.0 * t];
        let d2q = [-2.0, -2.0, 2.0];
        for a in 0..3 {
            g[3 * j + a] = -dq[a] / q;
            for c in 0..3 {
                h[(3 * j + a, 3 * j + c)] += dq[a] * dq[c] / (q * q);
            }
            h[(3 * j + a, 3 * j + a)] -= d2q[a] / q;
        }
        ball -= re * re + im * im;
    }
    let mut db = vec![0.0; n];
    for j in 0..b.modes {
        let o = b.start + 3 * j;
        db[3 * j] = -2.0 * x[o];
        db[3 * j + 1] = -2.0 * x[o + 1];
    }
    for a in 0..n {
        g[a] -= db[a] / ball;
        for c in 0..n {
            h[(a, c)] += db[a] * db[c] / (ball * ball);
        }
    }
    for j in 0..b.modes {
        h[(3 * j, 3 * j)] += 2.0 / ball;
        h[(3 * j + 1, 3 * j + 1)] += 2.0 / ball;
    }
    (g, h)
}

/// Block-diagonal plus low-rank symmetric positive-definite matrix
/// `D + Σ u uᵀ`.
pub(crate) struct StructuredMatrix {
    /// (start, block) pairs; blocks tile `0..n`.
    pub blocks: Vec<(usize, DMatrix<f64>)>,
    pub columns: Vec<Vec<f64>>,
}

impl StructuredMatrix {
    #[cfg(test)]
    fn n(&self) -> usize {
        self.blocks.last().map(|(s, b)| s + b.nrows()).unwrap_or(0)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (s, b) in &self.blocks {
            let k = b.nrows();
            for r in 0..k {
                y[s + r] = (0..k).map(|c| b[(r, c)] * x[s + c]).sum();
            }
        }
        for u in &self.columns {
            let w = dot(u, x);
            y.iter_mut().zip(u).for_each(|(yi, ui)| *yi += w * ui);
        }
        y
    }

    #[cfg(test)]
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for (s, b) in &self.blocks {
            m.view_mut((*s, *s), (b.nrows(), b.nrows())).copy_from(b);
        }
        for u in &self.columns {
            let v = DVector::from_column_slice(u);
            m += &v * v.transpose();
        }
        m
    }

    /// Solve `self · x = rhs` by Woodbury with one refinement step.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let factors: Vec<_> = self
            .blocks
            .iter()
            .map(|(s, b)| factor(b).map(|f| (*s, f)))
            .collect::<Option<_>>()?;
        let block_solve = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; v.len()];
            for (s, f) in &factors {
                let k = f.l_dirty().nrows();
                let piece = f.solve(&DVector::from_column_slice(&v[*s..s + k]));
                out[*s..s + k].copy_from_slice(piece.as_slice());
            }
            out
        };
        let r = self.columns.len();
        let z: Vec<Vec<f64>> = self.columns.iter().map(|u| block_solve(u)).collect();
        let mut cap = DMatrix::identity(r, r);
        for i in 0..r {
            for j in 0..=i {
                let v = dot(&self.columns[i], &z[j]);
                cap[(i, j)] += v;
                if i != j {
                    cap[(j, i)] += v;
                }
            }
        }
        let cap = factor(&cap)?;
        let full_solve = |b: &[f64]| -> Vec<f64> {
            let mut y = block_solve(b);
            if r > 0 {
                let proj = DVector::from_iterator(r, self.columns.iter().map(|u| dot(u, &y)));
                let coef = cap.solve(&proj);
                for (zj, cj) in z.iter().zip(coef.iter()) {
                    y.iter_mut().zip(zj).for_each(|(yi, zi)| *yi -= cj * zi);
                }
            }
            y
        };
        let mut x = full_solve(rhs);
        let hx = self.apply(&x);
        let res: Vec<f64> = rhs.iter().zip(&hx).map(|(b, h)| b - h).collect();
        let corr = full_solve(&res);
        x.iter_mut().zip(&corr).for_each(|(xi, ci)| *xi += ci);
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

fn factor(m: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Some(c);
    }
    let scale = m.diagonal().amax().max(1e-300);
    let mut jitter = 1e-14 * scale;
    for _ in 0..8 {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = shifted.cholesky() {
            return Some(c);
        }
        jitter *= 100.0;
    }
    None
}

impl Problem {
    pub fn num_barrier_terms(&self) -> f64 {
        let elem: usize = self.blocks.iter().map(|b| 2 * b.modes + 1).sum();
        (elem + self.constraints.len()) as f64
    }

    pub fn strictly_feasible(&self, x: &[f64]) -> bool {
        self.blocks.iter().all(|b| element_domain(b, x))
            && self.objective.value(x).is_some()
            && self.constraints.iter().all(|c| c.value(x).is_some_and(|v| v > 0.0))
    }

    pub fn elements_interior(&self, x: &[f64]) -> bool {
        self.blocks.iter().all(|b| element_domain(b, x))
    }

    fn barrier_value(&self, x: &[f64], t: f64) -> Option<f64> {
        if !self.blocks.iter().all(|b| element_domain(b, x)) {
            return None;
        }
        let mut phi = t * self.objective.value(x)?;
        for b in &self.blocks {
            phi += element_barrier(b, x);
        }
        for c in &self.constraints {
            let v = c.value(x)?;
            if !(v > 0.0) {
                return None;
            }
            phi -= v.ln();
        }
        Some(phi)
    }

    /// Gradient and Newton matrix of the barrier function at `x`.
    pub(crate) fn newton_system(&self, x: &[f64], t: f64) -> (Vec<f64>, StructuredMatrix) {
        let n = self.n;
        let mut grad: Vec<f64> = self.objective.lin.iter().map(|v| t * v).collect();
        let mut diag_extra = vec![0.0; n];
        for &(i, w) in &self.objective.neg_log1p {
            let d = 1.0 + x[i];
            grad[i] -= t * w / d;
            diag_extra[i] += t * w / (d * d);
        }

        let mut columns = Vec::new();
        for c in &self.constraints {
            let v = c.value(x).expect("iterate inside the domain");
            let g = c.gradient(x);
            grad.iter_mut().zip(&g).for_each(|(gi, ci)| *gi -= ci / v);
            columns.push(g.iter().map(|gi| gi / v).collect());
            for (a, u) in &c.rank1 {
                let s = (2.0 * a / v).sqrt();
                if s > 0.0 {
                    columns.push(u.iter().map(|ui| s * ui).collect());
                }
            }
            for &(b, i) in &c.diag {
                diag_extra[i] += 2.0 * b / v;
            }
            for (beta, alpha, h) in &c.recip {
                let aff = alpha + dot(h, x);
                let s = (2.0 * beta / (aff.powi(3) * v)).sqrt();
                if s > 0.0 {
                    columns.push(h.iter().map(|hi| s * hi).collect());
                }
            }
        }

        let mut blocks = Vec::new();
        let mut next = 0;
        let push_scalars = |upto: usize, blocks: &mut Vec<(usize, DMatrix<f64>)>, next: &mut usize| {
            while *next < upto {
                blocks.push((*next, DMatrix::from_element(1, 1, diag_extra[*next])));
                *next += 1;
            }
        };
        for b in &self.blocks {
            push_scalars(b.start, &mut blocks, &mut next);
            let (g, mut h) = element_derivatives(b, x);
            for a in 0..b.len() {
                grad[b.start + a] += g[a];
                h[(a, a)] += diag_extra[b.start + a];
            }
            blocks.push((b.start, h));
            next = b.start + b.len();
        }
        push_scalars(n, &mut blocks, &mut next);
        (grad, StructuredMatrix { blocks, columns })
    }

    /// Barrier method from a strictly feasible point.
    pub fn barrier_solve(&self, x0: Vec<f64>, opts: &IpmOptions, slack: Option<usize>) -> IpmResult {
        let m = self.num_barrier_terms();
        let mut x = x0;
        let f0 = self.objective.value(&x).unwrap_or(0.0);
        let mut t = (m / f0.abs().max(1.0)).max(1e-6);
        let mut steps = 0;
        let done = |x: &[f64]| slack.zip(opts.early_stop).is_some_and(|(s, thr)| x[s] < thr);
        loop {
            // centering
            loop {
                if done(&x) {
                    let objective = self.objective.value(&x).unwrap_or(f64::NAN);
                    return IpmResult { x, status: SolveStatus::Optimal, objective, gap: m / t, newton_steps: steps };
                }
                if steps >= opts.max_newton {
                    let objective = self.objective.value(&x).unwrap_or(f64::NAN);
                    return IpmResult { x, status: SolveStatus::MaxIterations, objective, gap: m / t, newton_steps: steps };
                }
                steps += 1;
                let (g, h) = self.newton_system(&x, t);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                let Some(dx) = h.solve(&neg) else {
                    let objective = self.objective.value(&x).unwrap_or(f64::NAN);
                    return IpmResult { x, status: SolveStatus::MaxIterations, objective, gap: m / t, newton_steps: steps };
                };
                let slope = dot(&g, &dx);
                let decrement = -slope;
                if decrement <= 1e-10 {
                    break;
                }
                let phi = self.barrier_value(&x, t).expect("feasible iterate");
                let mut alpha = 1.0;
                let mut accepted = false;
                while alpha > 1e-16 {
                    let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + alpha * d).collect();
                    if let Some(p) = self.barrier_value(&trial, t) {
                        if p <= phi + 0.25 * alpha * slope {
                            x = trial;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if !accepted {
                    // no progress possible at this precision; treat as centred
                    break;
                }
            }
            let obj = self.objective.value(&x).unwrap_or(f64::NAN);
            if m / t <= opts.tol * obj.abs().max(1.0) {
                return IpmResult { x, status: SolveStatus::Optimal, objective: obj, gap: m / t, newton_steps: steps };
            }
            t *= opts.mu;
        }
    }

    /// Phase I followed by the barrier method. `x0` must be strictly inside
    /// the element constraints.
    pub fn minimize(&self, x0: Vec<f64>, opts: &IpmOptions) -> IpmResult {
        assert!(self.elements_interior(&x0), "start must be inside the element constraints");
        if self.strictly_feasible(&x0) {
            return self.barrier_solve(x0, opts, None);
        }
        let (phase1, x1) = self.phase_one(&x0);
        let s = self.n;
        let p1 = phase1.barrier_solve(
            x1,
            &IpmOptions { early_stop: Some(-1e-3), tol: opts.tol.max(1e-10), ..*opts },
            Some(s),
        );
        let mut x = p1.x;
        let slack = x[s];
        x.truncate(self.n);
        if !(slack < 0.0) || !self.strictly_feasible(&x) {
            let objective = self.objective.value(&x).unwrap_or(f64::NAN);
            let status = if p1.status == SolveStatus::MaxIterations && slack < 0.0 {
                SolveStatus::MaxIterations
            } else {
                SolveStatus::Infeasible
            };
            return IpmResult { x, status, objective, gap: p1.gap, newton_steps: p1.newton_steps };
        }
        let mut r = self.barrier_solve(x, opts, None);
        r.newton_steps += p1.newton_steps;
        r
    }

    /// Phase-I problem: minimize `s` subject to `c_i(x) + s >= 0`, `s >= −1`.
    pub fn phase_one(&self, x0: &[f64]) -> (Problem, Vec<f64>) {
        let n = self.n + 1;
        let mut constraints: Vec<Concave> = self
            .constraints
            .iter()
            .cloned()
            .map(|mut c| {
                c.extend(1);
                c.lin[n - 1] = 1.0;
                c
            })
            .collect();
        let mut floor = Concave::new(n);
        floor.c0 = 1.0;
        floor.lin[n - 1] = 1.0;
        constraints.push(floor);
        let mut lin = vec![0.0; n];
        lin[n - 1] = 1.0;
        let worst = self
            .constraints
            .iter()
            .map(|c| c.value(x0).map(|v| -v).unwrap_or(f64::INFINITY))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut x = x0.to_vec();
        x.push(worst.max(-0.5) + 1.0);
        let problem = Problem {
            n,
            blocks: self.blocks.clone(),
            objective: Objective { lin, neg_log1p: vec![] },
            constraints,
        };
        (problem, x)
    }
}
