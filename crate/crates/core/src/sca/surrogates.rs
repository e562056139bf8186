//! First-order bounds used to convexify the penalized design problem.

use serde::{Deserialize, Serialize};

use crate::channel::{inner, C64};

/// Coefficient of `χ` in the quadratic-over-affine minorants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinorantForm {
    /// `|a|²/χ̃²`, the tangent plane of `|a|²/χ`; a global lower bound.
    #[default]
    Conventional,
    /// `(|a|²/χ̃)²`, as the formula is commonly printed. Not a lower bound
    /// in general.
    AsPrinted,
}

impl MinorantForm {
    pub(crate) fn chi_coefficient(self, a2: f64, chi_tilde: f64) -> f64 {
        match self {
            MinorantForm::Conventional => a2 / (chi_tilde * chi_tilde),
            MinorantForm::AsPrinted => (a2 / chi_tilde).powi(2),
        }
    }
}

/// Binary-amplitude penalty `|v| − |v|²`.
pub fn penalty(v: C64) -> f64 {
    v.norm() - v.norm_sqr()
}

/// Upper bound of [`penalty`] linearized at `v_tilde`.
pub fn surrogate_f0(v: C64, v_tilde: C64) -> f64 {
    v.norm() - (2.0 * (v_tilde.conj() * v).re - v_tilde.norm_sqr())
}

/// Lower bound of `1/χ`.
pub fn surrogate_f1(chi: f64, chi_tilde: f64) -> f64 {
    2.0 / chi_tilde - chi / (chi_tilde * chi_tilde)
}

/// Lower bound of `|w̄^H v|² / χ`.
pub fn surrogate_f2(
    w_bar: &[C64],
    v_tilde: &[C64],
    chi_tilde: f64,
    v: &[C64],
    chi: f64,
    form: MinorantForm,
) -> f64 {
    let a_t = inner(w_bar, v_tilde);
    let a = inner(w_bar, v);
    2.0 * (a_t.conj() * a).re / chi_tilde - form.chi_coefficient(a_t.norm_sqr(), chi_tilde) * chi
}

/// Lower bound of `Σ |v_m|² / χ`.
pub fn surrogate_f3(v_tilde: &[C64], chi_tilde: f64, v: &[C64], chi: f64, form: MinorantForm) -> f64 {
    v_tilde
        .iter()
        .zip(v)
        .map(|(vt, vm)| {
            2.0 * (vt.conj() * vm).re / chi_tilde - form.chi_coefficient(vt.norm_sqr(), chi_tilde) * chi
        })
        .sum()
}

/// Affine lower bound of `δ + ε |w̄^H v|² + ζ Σ |v_m|²` at `v_tilde`.
pub fn surrogate_f4(delta: f64, epsilon: f64, zeta: f64, w_bar: &[C64], v_tilde: &[C64], v: &[C64]) -> f64 {
    let a_t = inner(w_bar, v_tilde);
    let a = inner(w_bar, v);
    let quad: f64 = v_tilde
        .iter()
        .zip(v)
        .map(|(vt, vm)| 2.0 * (vt.conj() * vm).re - vt.norm_sqr())
        .sum();
    delta + epsilon * (2.0 * (a_t.conj() * a).re - a_t.norm_sqr()) + zeta * quad
}
