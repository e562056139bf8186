//! Closed-form expected channel gains and Jensen-type rate approximations
//! used by the two long-term designs.

use std::f64::consts::PI;

use crate::channel::{inner, Region, StatisticalCsi, C64};
use crate::error::{CoreError, Result};
use crate::noma::sic_rates_unchecked;

/// Per-user coefficients of the expected BTE gain.
#[derive(Debug, Clone, PartialEq)]
pub struct BteExpectationParams {
    /// Weight of the coherent cascaded-LoS term.
    pub epsilon: Vec<f64>,
    /// Weight of the per-element incoherent term.
    pub zeta: Vec<f64>,
}

impl BteExpectationParams {
    pub fn new(scsi: &StatisticalCsi) -> Self {
        let (k1, k2) = (scsi.kappa1, scsi.kappa2);
        let denom = (k1 + 1.0) * (k2 + 1.0);
        let base = scsi.delta_sk.iter().map(|d| scsi.delta_bs * d);
        BteExpectationParams {
            epsilon: base.clone().map(|b| k1 * k2 * b / denom).collect(),
            zeta: base.map(|b| (k1 + k2 + 1.0) * b / denom).collect(),
        }
    }
}

/// `e^{-z} I_0(z)` and `e^{-z} I_1(z)` for `z >= 0`.
fn scaled_bessel_i01(z: f64) -> (f64, f64) {
    if z <= 30.0 {
        let q = 0.25 * z * z;
        let (mut t0, mut t1) = (1.0, 0.5 * z);
        let (mut s0, mut s1) = (t0, t1);
        let mut k = 1.0;
        while t0 > 1e-18 * s0 || t1 > 1e-18 * s1.max(f64::MIN_POSITIVE) {
            t0 *= q / (k * k);
            t1 *= q / (k * (k + 1.0));
            s0 += t0;
            s1 += t1;
            k += 1.0;
            if k > 500.0 {
                break;
            }
        }
        let e = (-z).exp();
        (s0 * e, s1 * e)
    } else {
        // Hankel asymptotic expansion; terms keep shrinking well past 1e-16 here
        let asym = |nu: f64| {
            let mu = 4.0 * nu * nu;
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..40 {
                let kf = k as f64;
                term *= -(mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * z);
                sum += term;
                if term.abs() < 1e-17 * sum.abs() {
                    break;
                }
            }
            sum / (2.0 * PI * z).sqrt()
        };
        (asym(0.0), asym(1.0))
    }
}

/// Laguerre function `L_{1/2}(x)` for `x <= 0`.
pub fn laguerre_half(x: f64) -> f64 {
    assert!(x <= 0.0, "laguerre_half is only defined here for x <= 0");
    let kappa = -x;
    let (i0, i1) = scaled_bessel_i01(0.5 * kappa);
    (1.0 + kappa) * i0 + kappa * i1
}

/// Mean of the modulus of a unit-power Rician variable with factor `kappa`.
pub fn rician_mean_amplitude(kappa: f64) -> f64 {
    (PI / (4.0 * (kappa + 1.0))).sqrt() * laguerre_half(-kappa)
}

fn region_vec<'a>(v_t: &'a [C64], v_r: &'a [C64], region: Region) -> &'a [C64] {
    match region {
        Region::Transmission => v_t,
        Region::Reflection => v_r,
    }
}

/// Expected effective power gain of `user` under fixed coefficients.
pub fn expected_gain_bte(
    scsi: &StatisticalCsi,
    params: &BteExpectationParams,
    v_t: &[C64],
    v_r: &[C64],
    user: usize,
    region: Region,
) -> f64 {
    let v = region_vec(v_t, v_r, region);
    let coherent = inner(&scsi.w_los[user], v).norm_sqr();
    let active: f64 = v.iter().map(|x| x.norm_sqr()).sum();
    scsi.delta_k[user] + params.epsilon[user] * coherent + params.zeta[user] * active
}

/// Expected gains of all users for fixed coefficients.
pub fn expected_gains_bte(scsi: &StatisticalCsi, v_t: &[C64], v_r: &[C64]) -> Vec<f64> {
    let params = BteExpectationParams::new(scsi);
    (0..scsi.num_users())
        .map(|k| expected_gain_bte(scsi, &params, v_t, v_r, k, scsi.regions[k]))
        .collect()
}

/// Approximate expected BTE rates: SIC rates on expected gains, scaled by
/// the `K`-symbol training overhead.
pub fn expected_rate_bte(gains: &[f64], p: &[f64], sigma2: f64, t_c: f64) -> Vec<f64> {
    let factor = 1.0 - gains.len() as f64 / t_c;
    sic_rates_unchecked(gains, p, sigma2)
        .into_iter()
        .map(|r| factor * r)
        .collect()
}

/// Expected PTE power gain of `user` when it owns `m_k` phase-aligned elements.
pub fn expected_gain_pte(scsi: &StatisticalCsi, m_k: usize, user: usize) -> f64 {
    let (k1, k2) = (scsi.kappa1, scsi.kappa2);
    let denom = (k1 + 1.0) * (k2 + 1.0);
    let lag = laguerre_half(-k1) * laguerre_half(-k2);
    let cascade = scsi.delta_bs * scsi.delta_sk[user];
    let direct = scsi.delta_k[user];
    let m = m_k as f64;
    direct
        + cascade * m
        + PI * PI * cascade * m * (m - 1.0) / (16.0 * denom) * lag * lag
        + (PI.powi(3) * direct * cascade / (16.0 * denom)).sqrt() * lag * m
}

/// Approximate expected PTE rates with the `M + K`-symbol overhead.
pub fn expected_rate_pte(
    gains: &[f64],
    p: &[f64],
    sigma2: f64,
    t_c: f64,
    num_elements: usize,
) -> Result<Vec<f64>> {
    let overhead = (num_elements + gains.len()) as f64;
    if overhead >= t_c {
        return Err(CoreError::invalid(format!(
            "PTE overhead {overhead} leaves no data symbols in T_c = {t_c}"
        )));
    }
    let factor = 1.0 - overhead / t_c;
    Ok(sic_rates_unchecked(gains, p, sigma2)
        .into_iter()
        .map(|r| factor * r)
        .collect())
}
