#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use starnoma::channel::{derive_statistical_csi, drop_users, PathLossModel, StatisticalCsi, C64};
use starnoma::noma::{decoding_order, NomaConfig};

pub const BS: [f64; 3] = [0.0, 0.0, 1.0];
pub const RIS: [f64; 3] = [50.0, 0.0, 1.0];

/// Users dropped around the surface and sorted into decoding order.
pub fn scenario(m: usize, kt: usize, kr: usize, kappa: f64, seed: u64) -> StatisticalCsi {
    let geo = drop_users(BS, RIS, 5.0, (kt, kr), seed).unwrap();
    let geo = geo.reordered(&decoding_order(&geo).unwrap()).unwrap();
    derive_statistical_csi(&geo, &PathLossModel::default(), kappa, kappa, m).unwrap()
}

pub fn noma(k: usize, gamma: f64, t_c: f64) -> NomaConfig {
    NomaConfig { p_max: 1.0, sigma2: 1e-11, gamma: vec![gamma; k], t_coherence: t_c }
}

pub fn cvec(rng: &mut ChaCha8Rng, m: usize, scale: f64) -> Vec<C64> {
    (0..m).map(|_| C64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))).collect()
}

/// Random point of the per-element energy ball.
pub fn energy_point(rng: &mut ChaCha8Rng, m: usize) -> (Vec<C64>, Vec<C64>) {
    (0..m)
        .map(|_| {
            let split: f64 = rng.random();
            let amp = rng.random::<f64>().sqrt();
            (
                C64::from_polar(amp * split.sqrt(), rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)),
                C64::from_polar(amp * (1.0 - split).sqrt(), rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)),
            )
        })
        .unzip()
}

/// Random mode-switching coefficients: every element in one mode at unit amplitude.
pub fn binary_point(rng: &mut ChaCha8Rng, m: usize) -> (Vec<C64>, Vec<C64>) {
    let zero = C64::new(0.0, 0.0);
    (0..m)
        .map(|_| {
            let z = C64::from_polar(1.0, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
            if rng.random::<bool>() {
                (z, zero)
            } else {
                (zero, z)
            }
        })
        .unzip()
}

pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Standard SIC rate of user k: interference from the powers of the users
/// decoded after it, on its own gain.
pub fn sic_rate_oracle(gains: &[f64], p: &[f64], sigma2: f64, k: usize) -> f64 {
    let interference: f64 = p[..k].iter().sum::<f64>() * gains[k];
    (1.0 + p[k] * gains[k] / (interference + sigma2)).log2()
}

/// Best sum-rate over a `steps × steps` grid of the two weakest users'
/// powers of a 3-user instance, with user 0 taking the rest. `None` when no
/// grid point meets every target.
pub fn power_grid_best(gains: &[f64], gamma: &[f64], p_max: f64, sigma2: f64, steps: usize) -> Option<f64> {
    assert_eq!(gains.len(), 3);
    let mut best: Option<f64> = None;
    for i in 0..=steps {
        for j in 0..=steps {
            let (p1, p2) = (p_max * i as f64 / steps as f64, p_max * j as f64 / steps as f64);
            let p0 = p_max - p1 - p2;
            if p0 < 0.0 {
                continue;
            }
            let p = [p0, p1, p2];
            let rates: Vec<f64> = (0..3).map(|k| sic_rate_oracle(gains, &p, sigma2, k)).collect();
            if rates.iter().zip(gamma).all(|(r, g)| r >= g) {
                let s: f64 = rates.iter().sum();
                best = Some(best.map_or(s, |b: f64| b.max(s)));
            }
        }
    }
    best
}

/// Decreasing gains spread over two decades and targets in `[0.2, 2]`.
pub fn random_three_user(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let mut g: Vec<f64> = (0..3).map(|_| 10f64.powf(rng.random_range(-11.0..-9.0))).collect();
    g.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let gamma = (0..3).map(|_| rng.random_range(0.2..2.0)).collect();
    (g, gamma)
}

/// Expected BTE sum-rate of binary coefficients, or `None` when the gains
/// are out of order or the targets are out of reach.
pub fn bte_value(scsi: &StatisticalCsi, cfg: &NomaConfig, v_t: &[C64], v_r: &[C64]) -> Option<f64> {
    let g = starnoma::stats::expected_gains_bte(scsi, v_t, v_r);
    if !g.windows(2).all(|w| w[0] > w[1]) {
        return None;
    }
    let alloc = starnoma::noma::optimal_power_allocation(&g, cfg);
    alloc
        .feasible
        .then(|| starnoma::stats::expected_rate_bte(&g, &alloc.p, cfg.sigma2, cfg.t_coherence).iter().sum())
}

/// Exhaustive search over every mode pattern and a `levels`-point phase
/// grid per element. The first element of each mode keeps phase 0, since a
/// common rotation leaves every expected gain unchanged.
pub fn bte_exhaustive(scsi: &StatisticalCsi, cfg: &NomaConfig, levels: usize) -> Option<f64> {
    let m = scsi.num_elements();
    let zero = C64::new(0.0, 0.0);
    let mut best: Option<f64> = None;
    for pattern in 0..(1usize << m) {
        let reflect: Vec<bool> = (0..m).map(|i| pattern >> i & 1 == 1).collect();
        let free = m - 1;
        for code in 0..levels.pow(free as u32) {
            let mut digits = code;
            let mut first = [true, true];
            let mut v_t = vec![zero; m];
            let mut v_r = vec![zero; m];
            for i in 0..m {
                let s = reflect[i] as usize;
                let phase = if first[s] {
                    first[s] = false;
                    0.0
                } else {
                    let d = digits % levels;
                    digits /= levels;
                    2.0 * std::f64::consts::PI * d as f64 / levels as f64
                };
                let z = C64::from_polar(1.0, phase);
                if s == 1 {
                    v_r[i] = z;
                } else {
                    v_t[i] = z;
                }
            }
            // codes that differ only in unused digits repeat earlier points
            if digits != 0 {
                continue;
            }
            if let Some(v) = bte_value(scsi, cfg, &v_t, &v_r) {
                best = Some(best.map_or(v, |b: f64| b.max(v)));
            }
        }
    }
    best
}

/// Approximate PTE sum-rate of element counts, or `None` when infeasible.
pub fn pte_value(scsi: &StatisticalCsi, cfg: &NomaConfig, counts: &[usize]) -> Option<f64> {
    let g: Vec<f64> = counts.iter().enumerate().map(|(k, &c)| starnoma::stats::expected_gain_pte(scsi, c, k)).collect();
    if !g.windows(2).all(|w| w[0] > w[1]) {
        return None;
    }
    let alloc = starnoma::noma::optimal_power_allocation(&g, cfg);
    let m: usize = counts.iter().sum();
    alloc
        .feasible
        .then(|| starnoma::stats::expected_rate_pte(&g, &alloc.p, cfg.sigma2, cfg.t_coherence, m).unwrap().iter().sum())
}

/// Every composition of `m` into `k` non-negative parts.
pub fn compositions(m: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![m]];
    }
    (0..=m)
        .flat_map(|first| {
            compositions(m - first, k - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

pub fn pte_exhaustive(scsi: &StatisticalCsi, cfg: &NomaConfig) -> Option<(Vec<usize>, f64)> {
    pte_exhaustive_where(scsi, cfg, |_| true)
}

/// Best partition among those accepted by `keep`.
pub fn pte_exhaustive_where(scsi: &StatisticalCsi, cfg: &NomaConfig, keep: impl Fn(&[usize]) -> bool) -> Option<(Vec<usize>, f64)> {
    compositions(scsi.num_elements(), scsi.num_users())
        .into_iter()
        .filter(|c| keep(c))
        .filter_map(|c| pte_value(scsi, cfg, &c).map(|v| (c, v)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
}
