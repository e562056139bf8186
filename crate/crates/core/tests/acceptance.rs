//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! A FAIL is reported but does not fail the target unless
//! `ACCEPTANCE_STRICT=1` is set; errors and panics always do.

mod common;

use std::time::Instant;

use common::{binary_point, bte_exhaustive, bte_value, cvec, energy_point, noma, pte_exhaustive, pte_exhaustive_where, scenario, sic_rate_oracle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use starnoma::bte::{optimize_long_term, PenaltySchedule};
use starnoma::channel::{derive_statistical_csi, effective_channel, sample_channels, C64};
use starnoma::experiments::{draw_geometry, run_approximation_audit, run_monte_carlo, ExperimentConfig, Scheme, TrialResult};
use starnoma::noma::{optimal_power_allocation, sic_rates, NomaConfig};
use starnoma::pte::optimize_partition;
use starnoma::sca::{penalty, surrogate_f0, surrogate_f1, surrogate_f2, surrogate_f3, surrogate_f4, MinorantForm};
use starnoma::stats::{expected_gain_bte, expected_gain_pte, expected_gains_bte, BteExpectationParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Closed-form BTE gain against 1e5 realizations on 20 random binary designs.
fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for pair in 0..20u64 {
        let m = rng.random_range(4..=16);
        let (kt, kr) = (rng.random_range(1..=2), rng.random_range(0..=2));
        let s = scenario(m, kt, kr, rng.random_range(0.0..8.0), 1000 + pair);
        let (vt, vr) = binary_point(&mut rng, m);
        let k = rng.random_range(0..s.num_users());
        let closed = expected_gains_bte(&s, &vt, &vr)[k];
        let n = 100_000;
        let mean = (0..n)
            .map(|_| effective_channel(&sample_channels(&s, &mut rng), &vt, &vr, k, s.regions[k]).unwrap().norm_sqr())
            .sum::<f64>()
            / n as f64;
        worst = worst.max((closed - mean).abs() / closed);
    }
    outcome(worst <= 0.01, format!("worst relative gap {worst:.4} (limit 0.01)"))
}

/// Aligned-phase PTE gain against 1e5 realizations.
fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for pair in 0..20u64 {
        let m = rng.random_range(2..=40);
        let s = scenario(m, 1, 1, rng.random_range(0.0..8.0), 2000 + pair);
        let k = rng.random_range(0..2);
        let m_k = rng.random_range(1..=m);
        let closed = expected_gain_pte(&s, m_k, k);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| {
                let real = sample_channels(&s, &mut rng);
                // every element rotated onto the direct link
                let amp = real.h[k].norm() + real.w[k][..m_k].iter().map(|z| z.norm()).sum::<f64>();
                amp * amp
            })
            .sum::<f64>()
            / n as f64;
        worst = worst.max((closed - mean).abs() / closed);
    }
    outcome(worst <= 0.02, format!("worst relative gap {worst:.4} (limit 0.02)"))
}

/// Closed-form power allocation against a 200×200 grid on 100 instances.
fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut feasible, mut bad) = (0, Vec::new());
    let mut worst_target: f64 = 0.0;
    for i in 0..100 {
        let (g, gamma) = common::random_three_user(&mut rng);
        let cfg = NomaConfig { p_max: 1.0, sigma2: 1e-11, gamma: gamma.clone(), t_coherence: 400.0 };
        let alloc = optimal_power_allocation(&g, &cfg);
        let grid = common::power_grid_best(&g, &gamma, 1.0, 1e-11, 200);
        match (alloc.feasible, grid) {
            (true, best) => {
                feasible += 1;
                let rates = sic_rates(&g, &alloc.p, 1e-11).unwrap();
                let sum: f64 = rates.iter().sum();
                for k in 1..3 {
                    let oracle = sic_rate_oracle(&g, &alloc.p, 1e-11, k);
                    worst_target = worst_target.max((rates[k] - gamma[k]).abs()).max((oracle - gamma[k]).abs());
                }
                // grid points are feasible points, so none may beat the optimum
                if let Some(best) = best {
                    if sum < best - 1e-9 * best {
                        bad.push(i);
                    }
                }
            }
            (false, Some(_)) => bad.push(i),
            (false, None) => {}
        }
    }
    outcome(
        bad.is_empty() && worst_target <= 1e-9,
        format!("{feasible} feasible, {} beaten by the grid, max target error {worst_target:.1e}", bad.len()),
    )
}

/// Partition search against exhaustive enumeration, M ≤ 12, K = 3. The
/// detail line also gives the ratio against the best partition in which
/// the weakest user owns at least one element, where the search starts.
fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut n, mut below, mut missed) = (0, 0, 0);
    let (mut worst, mut worst_started): (f64, f64) = (1.0, 1.0);
    let mut seed = 4000;
    while n < 50 {
        seed += 1;
        let m = rng.random_range(3..=12);
        let kt = rng.random_range(0..=3);
        let s = scenario(m, kt, 3 - kt, 1.0, seed);
        let cfg = noma(3, rng.random_range(0.5..2.5), 400.0);
        let Some((_, best)) = pte_exhaustive(&s, &cfg) else { continue };
        n += 1;
        let started = pte_exhaustive_where(&s, &cfg, |c| c[2] >= 1).map(|b| b.1);
        match optimize_partition(&s, &cfg) {
            Ok(sol) => {
                let r = sol.expected_sum_rate / best;
                worst = worst.min(r);
                below += (r < 0.97) as usize;
                if let Some(b) = started {
                    worst_started = worst_started.min(sol.expected_sum_rate / b);
                }
            }
            Err(_) => {
                missed += 1;
                worst = 0.0;
            }
        }
    }
    outcome(
        below == 0 && missed == 0,
        format!(
            "{n} instances, {below} below 97%, {missed} without a design, worst ratio {worst:.4}; \
             worst ratio with the weakest user owning an element {worst_started:.4}"
        ),
    )
}

/// Penalty SCA convergence at M = 40, K = 4.
fn criterion_5() -> Outcome {
    let cfg = ExperimentConfig { num_elements: 40, ..Default::default() };
    let geo = draw_geometry(&cfg, 0).unwrap();
    let s = derive_statistical_csi(&geo, &cfg.path_loss(), cfg.kappa1, cfg.kappa2, 40).unwrap();
    let sched = PenaltySchedule { eta0: 1e-4, omega: 10.0, ..Default::default() };
    let sol = match optimize_long_term(&s, &cfg.noma(), &sched, None) {
        Ok(sol) => sol,
        Err(e) => return outcome(false, format!("no design: {e}")),
    };
    let monotone = sol
        .trace
        .windows(2)
        .filter(|w| w[0].outer == w[1].outer)
        .all(|w| w[1].objective >= w[0].objective - 1e-9 * w[0].objective.abs().max(1.0));
    let pass = sol.final_violation <= 1e-7 && monotone && sol.outer_loops <= 10;
    outcome(
        pass,
        format!(
            "violation {:.2e}, {} outer loops, inner objective monotone: {monotone}, expected sum-rate {:.4}",
            sol.final_violation, sol.outer_loops, sol.expected_sum_rate
        ),
    )
}

/// Penalty SCA against exhaustive mode × phase search at M = 4, K = 2.
fn criterion_6() -> Outcome {
    let mut worst: f64 = 1.0;
    let mut n = 0;
    for seed in 0..8u64 {
        let s = scenario(4, 1, 1, 3.0, 600 + seed);
        let cfg = noma(2, 1.0, 400.0);
        let Some(best) = bte_exhaustive(&s, &cfg, 16) else { continue };
        n += 1;
        let r = match optimize_long_term(&s, &cfg, &PenaltySchedule::default(), None) {
            // re-evaluated independently of the solver's own bookkeeping
            Ok(sol) => bte_value(&s, &cfg, &sol.coeffs.v_t, &sol.coeffs.v_r).unwrap_or(0.0) / best,
            Err(_) => 0.0,
        };
        worst = worst.min(r);
    }
    outcome(n > 0 && worst >= 0.97, format!("{n} instances, worst ratio {worst:.4} (limit 0.97)"))
}

fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Surrogate bounds on 1e4 random points each, exact at the anchor.
fn criterion_7() -> Outcome {
    const N: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let slack = |x: f64| 1e-12 * x.abs().max(1.0);
    let mut fails = [0usize; 5];
    let mut anchor_err: f64 = 0.0;
    let form = MinorantForm::Conventional;
    for _ in 0..N {
        let v = C64::from_polar(rng.random_range(0.0..1.0), rng.random_range(-3.2..3.2));
        let vt = C64::from_polar(rng.random_range(0.0..1.0), rng.random_range(-3.2..3.2));
        fails[0] += (surrogate_f0(v, vt) < penalty(v) - slack(penalty(v))) as usize;
        anchor_err = anchor_err.max((surrogate_f0(vt, vt) - penalty(vt)).abs());

        let m = rng.random_range(1..8);
        let w = cvec(&mut rng, m, 1.0);
        let (x, xt) = (cvec(&mut rng, m, 1.0), cvec(&mut rng, m, 1.0));
        let chi = 10f64.powf(rng.random_range(-2.0..3.0));
        let chi_t = 10f64.powf(rng.random_range(-2.0..3.0));
        fails[1] += (surrogate_f1(chi, chi_t) > 1.0 / chi + slack(1.0 / chi)) as usize;
        let quad = inner(&w, &x).norm_sqr() / chi;
        fails[2] += (surrogate_f2(&w, &xt, chi_t, &x, chi, form) > quad + slack(quad)) as usize;
        let energy = x.iter().map(|z| z.norm_sqr()).sum::<f64>() / chi;
        fails[3] += (surrogate_f3(&xt, chi_t, &x, chi, form) > energy + slack(energy)) as usize;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
        anchor_err = anchor_err.max(rel(surrogate_f1(chi_t, chi_t), 1.0 / chi_t));
        anchor_err = anchor_err.max(rel(surrogate_f2(&w, &xt, chi_t, &xt, chi_t, form), inner(&w, &xt).norm_sqr() / chi_t));
        let e_t = xt.iter().map(|z| z.norm_sqr()).sum::<f64>() / chi_t;
        anchor_err = anchor_err.max(rel(surrogate_f3(&xt, chi_t, &xt, chi_t, form), e_t));
    }
    for i in 0..N {
        let s = scenario(6, 1, 1, rng.random_range(0.0..8.0), (i % 40) as u64);
        let params = BteExpectationParams::new(&s);
        let k = rng.random_range(0..2);
        let reg = s.regions[k];
        let (vt, vr) = energy_point(&mut rng, 6);
        let (at, ar) = energy_point(&mut rng, 6);
        let (v, a) = if reg.index() == 0 { (&vt, &at) } else { (&vr, &ar) };
        let f4 = |x: &[C64]| surrogate_f4(s.delta_k[k], params.epsilon[k], params.zeta[k], &s.w_los[k], a, x);
        let target = expected_gain_bte(&s, &params, &vt, &vr, k, reg);
        fails[4] += (f4(v) > target + 1e-12 * target) as usize;
        let at_anchor = expected_gain_bte(&s, &params, &at, &ar, k, reg);
        anchor_err = anchor_err.max((f4(a) - at_anchor).abs() / at_anchor);
    }
    outcome(
        fails.iter().all(|&f| f == 0) && anchor_err <= 1e-10,
        format!("bound violations f0..f4 {fails:?}, max anchor error {anchor_err:.1e}"),
    )
}

/// Jensen-approximated sum-rates against simulation at the long-term
/// reference powers, 1e4 blocks, κ = 1, both rate-approximation settings.
fn criterion_8() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (p_max_dbm, gamma) in [(30.0, 2.0), (25.0, 1.0)] {
        let cfg = ExperimentConfig {
            p_max_dbm,
            gamma: vec![gamma],
            kappa1: 1.0,
            kappa2: 1.0,
            audit_samples: 10_000,
            ..Default::default()
        };
        let records = run_approximation_audit(&cfg).unwrap();
        for q in ["bte_sum_rate_fixed_power", "pte_sum_rate_fixed_power"] {
            match records.iter().find(|r| r.quantity == q) {
                Some(r) => {
                    // the bound holds in expectation; allow the sampling error of 1e4 blocks
                    let ok = r.relative_gap >= -0.005 && r.relative_gap <= 0.05;
                    pass &= ok;
                    lines.push(format!("{}dBm/{}: {} gap {:+.4}", p_max_dbm, gamma, &q[..3], r.relative_gap));
                }
                None => {
                    pass = false;
                    lines.push(format!("{}dBm/{}: {} has no design", p_max_dbm, gamma, &q[..3]));
                }
            }
        }
    }
    outcome(pass, lines.join(", "))
}

/// Mean sum-rate of a scheme per sweep point; a point without a design
/// contributes zero rate.
fn curve(results: &[TrialResult], scheme: Scheme, points: &[f64]) -> Vec<f64> {
    points
        .iter()
        .map(|&v| results.iter().find(|r| r.scheme == scheme && r.sweep_value == v).map_or(0.0, |r| r.mean_sum_rate))
        .collect()
}

fn increasing(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[1] > w[0])
}

fn unimodal(x: &[f64]) -> bool {
    let peak = x.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).map_or(0, |p| p.0);
    x[..=peak].windows(2).all(|w| w[1] >= w[0]) && x[peak..].windows(2).all(|w| w[1] <= w[0])
}

fn fmt_curve(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" ")
}

/// Sum-rate trends against T_c, M and κ at 5000 blocks per point.
fn criterion_9() -> Outcome {
    let trials = 5000;
    let mut parts = Vec::new();
    let mut pass = true;

    // T_c sweep with two users and γ = 3
    let tc: Vec<f64> = (2..=10).map(|i| 100.0 * i as f64).collect();
    let cfg = ExperimentConfig {
        k_t: 1,
        k_r: 1,
        gamma: vec![3.0],
        n_trials: trials,
        sweep: format!("T_c={}", tc.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")).parse().unwrap(),
        schemes: Scheme::ALL.to_vec(),
        ..Default::default()
    };
    let out = run_monte_carlo(&cfg).unwrap();
    let (bte, pte) = (curve(&out.results, Scheme::Bte, &tc), curve(&out.results, Scheme::Pte, &tc));
    let (crb_tc, crp_tc) = (curve(&out.results, Scheme::CrNomaBte, &tc), curve(&out.results, Scheme::CrNomaPte, &tc));
    let c_tc = (0..tc.len()).all(|i| bte[i] >= crb_tc[i] && pte[i] >= crp_tc[i]);
    let spread = (bte.iter().cloned().fold(f64::MIN, f64::max) - bte.iter().cloned().fold(f64::MAX, f64::min)) / bte[0];
    let a = spread < 0.02 && increasing(&pte) && pte[tc.len() - 1] > bte[tc.len() - 1];
    parts.push(format!("(a) {} bte spread {spread:.4}, pte {}", if a { "ok" } else { "FAIL" }, fmt_curve(&pte)));
    pass &= a;
    let at400 = |s: Scheme| curve(&out.results, s, &[400.0])[0];
    let (b4, p4, f4, t4) = (at400(Scheme::Bte), at400(Scheme::Pte), at400(Scheme::Fdma), at400(Scheme::Tdma));
    let d = b4.min(p4) >= f4.max(t4);
    parts.push(format!("(d) {} bte {b4:.3} pte {p4:.3} fdma {f4:.3} tdma {t4:.3}", if d { "ok" } else { "FAIL" }));
    pass &= d;

    // M sweep
    let ms: Vec<f64> = (2..=10).map(|i| 10.0 * i as f64).collect();
    let cfg = ExperimentConfig {
        n_trials: trials,
        sweep: format!("M={}", ms.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")).parse().unwrap(),
        schemes: vec![Scheme::Bte, Scheme::Pte, Scheme::CrNomaBte, Scheme::CrNomaPte],
        ..Default::default()
    };
    let out = run_monte_carlo(&cfg).unwrap();
    let (bte, pte) = (curve(&out.results, Scheme::Bte, &ms), curve(&out.results, Scheme::Pte, &ms));
    let b = unimodal(&pte) && increasing(&bte);
    parts.push(format!("(b) {} pte {}, bte {}", if b { "ok" } else { "FAIL" }, fmt_curve(&pte), fmt_curve(&bte)));
    pass &= b;
    let (crb, crp) = (curve(&out.results, Scheme::CrNomaBte, &ms), curve(&out.results, Scheme::CrNomaPte, &ms));
    // a point where the split surface has no design counts as zero rate
    let c = c_tc && (0..ms.len()).all(|i| bte[i] >= crb[i] && pte[i] >= crp[i]);
    parts.push(format!(
        "(c) {} over M cr-bte {}, cr-pte {}; over T_c cr-bte {}, cr-pte {}",
        if c { "ok" } else { "FAIL" },
        fmt_curve(&crb),
        fmt_curve(&crp),
        fmt_curve(&crb_tc),
        fmt_curve(&crp_tc)
    ));
    pass &= c;

    // κ sweep
    let ks: Vec<f64> = (0..=10).map(|i| i as f64).collect();
    let cfg = ExperimentConfig {
        n_trials: trials,
        sweep: format!("kappa={}", ks.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")).parse().unwrap(),
        schemes: vec![Scheme::Bte, Scheme::Pte],
        ..Default::default()
    };
    let out = run_monte_carlo(&cfg).unwrap();
    let (bte, pte) = (curve(&out.results, Scheme::Bte, &ks), curve(&out.results, Scheme::Pte, &ks));
    let n = ks.len();
    // saturation: the last step adds less than a fifth of the first real gain
    let first_gain = bte.windows(2).map(|w| w[1] - w[0]).find(|&g| g > 0.0 && bte[0] > 0.0).unwrap_or(bte[2] - bte[1]);
    let saturating = bte[n - 1] - bte[n - 2] < 0.2 * first_gain;
    let e = increasing(&bte) && saturating && pte.windows(2).all(|w| w[1] >= w[0]);
    parts.push(format!("(e) {} bte {}, pte {}", if e { "ok" } else { "FAIL" }, fmt_curve(&bte), fmt_curve(&pte)));
    pass &= e;

    outcome(pass, parts.join("; "))
}

/// Partition skew at M = 50, K = 4, γ = 2, κ = 1.
fn criterion_10() -> Outcome {
    let cfg = ExperimentConfig { gamma: vec![2.0], kappa1: 1.0, kappa2: 1.0, ..Default::default() };
    let geo = draw_geometry(&cfg, 0).unwrap();
    let s = derive_statistical_csi(&geo, &cfg.path_loss(), 1.0, 1.0, 50).unwrap();
    match optimize_partition(&s, &cfg.noma()) {
        Ok(sol) => {
            let c = &sol.partition.counts;
            outcome(2 * c[0] > 50, format!("counts {c:?}"))
        }
        Err(e) => outcome(false, format!("no partition: {e}")),
    }
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; a filter
    // argument selects criteria by number
    let filters: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut failed = Vec::new();
    for (n, run) in criteria {
        if !filters.is_empty() && !filters.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        println!("criterion {n}: {} ({:.1}s) {}", if o.pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed.push(n);
        }
    }
    println!("acceptance: {} failed {failed:?}", failed.len());
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
