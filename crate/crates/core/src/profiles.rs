//! Closed-form lefton and peakon profiles, weights and localizers.
//!
//! Every power of `cosh` is evaluated through `log cosh`, so profiles stay
//! finite far into the tails and the growing weight `α` overflows only
//! where its logarithm exceeds the double range.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};

/// Largest exponent passed to `exp` before a weight sample is clamped.
pub const LOG_CLAMP: f64 = 700.0;

/// Default half-width of the weighted window.
pub const DEFAULT_WINDOW: f64 = 12.0;

/// Lefton parameters `(b, A, x*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeftonParams {
    pub b: f64,
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub x_star: f64,
}

/// `ln cosh y` without overflow.
pub fn log_cosh(y: f64) -> f64 {
    let a = y.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// `(A(1-b)/2)^(1/b+1)`.
pub fn lagrange_multiplier_k(b: f64, amplitude: f64) -> Result<f64> {
    if !(amplitude > 0.0) {
        return Err(Error::BadAmplitude(amplitude));
    }
    if b == 0.0 {
        return Err(Error::InvalidParameter("k is undefined at b = 0".into()));
    }
    Ok((amplitude * (1.0 - b) / 2.0).powf(1.0 / b + 1.0))
}

impl LeftonParams {
    pub fn new(b: f64, amplitude: f64, x_star: f64) -> Result<Self> {
        if !b.is_finite() || b >= -1.0 {
            return Err(Error::NotLeftonRegime(b));
        }
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::BadAmplitude(amplitude));
        }
        if !x_star.is_finite() {
            return Err(Error::InvalidParameter(format!("x* = {x_star}")));
        }
        Ok(LeftonParams { b, amplitude, x_star })
    }

    /// Same wave recentred at `x_star`.
    pub fn centred_at(self, x_star: f64) -> Self {
        LeftonParams { x_star, ..self }
    }

    pub fn nu(&self) -> f64 {
        -(self.b + 1.0) / 2.0
    }

    pub fn k(&self) -> f64 {
        self.peak_momentum().powf(1.0 / self.b + 1.0)
    }

    /// `L = 3 - b`, the scale of the monotonicity weight.
    pub fn l_weight(&self) -> f64 {
        3.0 - self.b
    }

    /// `Q(x*) = A(1-b)/2`.
    pub fn peak_momentum(&self) -> f64 {
        self.amplitude * (1.0 - self.b) / 2.0
    }

    fn lc(&self, x: f64) -> f64 {
        log_cosh(self.nu() * (x - self.x_star))
    }

    pub fn q_at(&self, x: f64) -> f64 {
        self.amplitude * (-self.lc(x) / self.nu()).exp()
    }

    /// `ln Q(x)`.
    pub fn log_big_q_at(&self, x: f64) -> f64 {
        self.peak_momentum().ln() + self.b / self.nu() * self.lc(x)
    }

    pub fn big_q_at(&self, x: f64) -> f64 {
        self.log_big_q_at(x).exp()
    }

    /// `Q(x)^e`, exact in the tails for either sign of `e`.
    pub fn big_q_pow_at(&self, x: f64, e: f64) -> f64 {
        (e * self.log_big_q_at(x)).exp()
    }

    pub fn tanh_at(&self, x: f64) -> f64 {
        (self.nu() * (x - self.x_star)).tanh()
    }

    pub fn sech2_at(&self, x: f64) -> f64 {
        let s = 1.0 / (self.nu() * (x - self.x_star)).cosh();
        s * s
    }

    /// `Q' = b tanh(ν(x-x*)) Q`.
    pub fn big_q_prime_at(&self, x: f64) -> f64 {
        self.b * self.tanh_at(x) * self.big_q_at(x)
    }

    /// `Q'' = bQ(ν sech² + b tanh²)`.
    pub fn big_q_second_at(&self, x: f64) -> f64 {
        let t = self.tanh_at(x);
        self.b * self.big_q_at(x) * (self.nu() * (1.0 - t * t) + self.b * t * t)
    }

    /// `q' = -tanh(ν(x-x*)) q`.
    pub fn q_prime_at(&self, x: f64) -> f64 {
        -self.tanh_at(x) * self.q_at(x)
    }

    /// Exponent of `Q` in the weight `α = Q^(-1/b-2)`.
    pub fn alpha_exponent(&self) -> f64 {
        -1.0 / self.b - 2.0
    }

    /// `ln α(x)`.
    pub fn log_alpha_at(&self, x: f64) -> f64 {
        self.alpha_exponent() * self.log_big_q_at(x)
    }

    /// `SQ = (2k(1-b)/b) Q^(-1/b) + (2(b-1)/b) Q`.
    pub fn sq_at(&self, x: f64) -> f64 {
        let b = self.b;
        2.0 * self.k() * (1.0 - b) / b * self.big_q_pow_at(x, -1.0 / b)
            + 2.0 * (b - 1.0) / b * self.big_q_at(x)
    }

    /// Half-width around `x*` on which `α/α(x*)` stays below `ratio`.
    pub fn alpha_window(&self, ratio: f64) -> f64 {
        // α/α(x*) = cosh(ν z)^{-(2b+1)/ν}
        let growth = -(2.0 * self.b + 1.0) / self.nu();
        let c = (ratio.ln() / growth).exp();
        c.acosh() / self.nu()
    }

    /// Largest half-width on which `α` stays representable.
    pub fn alpha_overflow_limit(&self) -> f64 {
        let growth = -(2.0 * self.b + 1.0) / self.nu();
        let base = self.alpha_exponent() * self.peak_momentum().ln();
        ((LOG_CLAMP - base) / growth + std::f64::consts::LN_2) / self.nu()
    }

    /// Validates a weighted window half-width against overflow.
    pub fn check_window(&self, window: f64) -> Result<()> {
        let limit = self.alpha_overflow_limit();
        if !(window > 0.0) || window > limit {
            return Err(Error::WindowOverflow { window, limit });
        }
        Ok(())
    }
}

/// `A (cosh ν(x-x*))^(-1/ν)`.
pub fn lefton_q(grid: &Grid, p: &LeftonParams) -> Field {
    grid.sample(|x| p.q_at(x))
}

/// `A(1-b)/2 (cosh ν(x-x*))^(b/ν)`.
pub fn lefton_big_q(grid: &Grid, p: &LeftonParams) -> Field {
    grid.sample(|x| p.big_q_at(x))
}

pub fn lefton_big_q_prime(grid: &Grid, p: &LeftonParams) -> Field {
    grid.sample(|x| p.big_q_prime_at(x))
}

pub fn lefton_big_q_second(grid: &Grid, p: &LeftonParams) -> Field {
    grid.sample(|x| p.big_q_second_at(x))
}

/// Samples of `Q^e`.
pub fn big_q_power(grid: &Grid, p: &LeftonParams, e: f64) -> Field {
    grid.sample(|x| p.big_q_pow_at(x, e))
}

/// Sampled weight with a record of clamped samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    pub values: Field,
    /// Indices whose exact value exceeded the floating-point range.
    pub clamped: Vec<usize>,
}

impl WeightField {
    pub fn is_clamped(&self) -> bool {
        !self.clamped.is_empty()
    }
}

fn clamped_exp(grid: &Grid, log_f: impl Fn(f64) -> f64) -> WeightField {
    let mut clamped = Vec::new();
    let values = grid
        .points()
        .enumerate()
        .map(|(i, x)| {
            let l = log_f(x);
            if l > LOG_CLAMP {
                clamped.push(i);
                LOG_CLAMP.exp()
            } else {
                l.exp()
            }
        })
        .collect();
    WeightField { values, clamped }
}

/// `α = Q^(-1/b-2)`.
pub fn weight_alpha(grid: &Grid, p: &LeftonParams) -> WeightField {
    clamped_exp(grid, |x| p.log_alpha_at(x))
}

/// `√α`, the change of variables to the Schrödinger frame.
pub fn sqrt_alpha(grid: &Grid, p: &LeftonParams) -> WeightField {
    clamped_exp(grid, |x| 0.5 * p.log_alpha_at(x))
}

pub fn profile_sq(grid: &Grid, p: &LeftonParams) -> Field {
    grid.sample(|x| p.sq_at(x))
}

/// Monotone weight `(2/π) arctan(exp(νx/L))` and its derivatives.
#[derive(Debug, Clone, Copy)]
pub struct PsiL {
    c: f64,
}

impl PsiL {
    pub fn new(p: &LeftonParams) -> Self {
        PsiL { c: p.nu() / p.l_weight() }
    }

    /// Rate `ν/L` of the exponential tail.
    pub fn rate(&self) -> f64 {
        self.c
    }

    pub fn value(&self, x: f64) -> f64 {
        2.0 / PI * (self.c * x).exp().atan()
    }

    pub fn d1(&self, x: f64) -> f64 {
        self.c / PI / (self.c * x).cosh()
    }

    pub fn d3(&self, x: f64) -> f64 {
        let s = 1.0 / (self.c * x).cosh();
        self.c.powi(3) / PI * s * (1.0 - 2.0 * s * s)
    }
}

pub fn weight_psi_l(x: f64, p: &LeftonParams) -> f64 {
    PsiL::new(p).value(x)
}

/// `b² Q(x / (M + t²))`.
pub fn localizer_phi_m(x: f64, t: f64, m: f64, p: &LeftonParams) -> Result<f64> {
    if !(m > 1.0) {
        return Err(Error::InvalidParameter(format!("localizer needs M > 1, got {m}")));
    }
    Ok(p.b * p.b * p.big_q_at(x / (m + t * t)))
}

/// `max{1, 32A(1-b)/(λ₁(b+1)²), 32A(1-b)/λ₁}` for a coercivity estimate `λ₁`.
pub fn default_localizer_m(p: &LeftonParams, lambda1: f64) -> f64 {
    let base = 32.0 * p.amplitude * (1.0 - p.b) / lambda1;
    1f64.max(base / (p.b + 1.0).powi(2)).max(base)
}

/// `c e^{-|x - ct|}`.
pub fn peakon_u(x: f64, t: f64, c: f64) -> f64 {
    c * (-(x - c * t).abs()).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p3() -> LeftonParams {
        LeftonParams::new(-3.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn rejects_non_lefton_parameters() {
        assert_eq!(LeftonParams::new(-1.0, 1.0, 0.0).unwrap_err(), Error::NotLeftonRegime(-1.0));
        assert_eq!(LeftonParams::new(2.0, 1.0, 0.0).unwrap_err(), Error::NotLeftonRegime(2.0));
        assert!(LeftonParams::new(-3.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn b_minus_three_profiles_are_sech_powers() {
        let p = p3();
        assert_relative_eq!(p.q_at(0.0), 1.0);
        assert_relative_eq!(p.q_at(1.3), 1.0 / 1.3f64.cosh(), max_relative = 1e-14);
        assert_relative_eq!(p.big_q_at(0.0), 2.0);
        assert_relative_eq!(p.big_q_at(0.7), 2.0 / 0.7f64.cosh().powi(3), max_relative = 1e-14);
        let p2 = LeftonParams::new(-3.0, 2.0, 0.0).unwrap();
        assert_relative_eq!(p2.q_at(0.0), 2.0);
        let p5 = p.centred_at(5.0);
        assert_relative_eq!(p5.q_at(5.0), 1.0);
        assert_relative_eq!(p5.q_at(0.0), 1.0 / 5f64.cosh(), max_relative = 1e-14);
    }

    #[test]
    fn multiplier_values() {
        assert_relative_eq!(lagrange_multiplier_k(-3.0, 1.0).unwrap(), 1.5874011, epsilon = 1e-7);
        assert_relative_eq!(lagrange_multiplier_k(-3.0, 0.5).unwrap(), 1.0);
        assert_relative_eq!(lagrange_multiplier_k(-2.0, 1.0).unwrap(), 1.2247449, epsilon = 1e-7);
        assert!(lagrange_multiplier_k(-3.0, -1.0).is_err());
    }

    #[test]
    fn derived_constants() {
        let p = p3();
        assert_eq!(p.nu(), 1.0);
        assert_eq!(p.l_weight(), 6.0);
        let lp = LeftonParams::new(-1.0001, 1.0, 0.0).unwrap();
        assert!(lp.l_weight() > 4.0);
    }

    #[test]
    fn alpha_closed_form() {
        let p = p3();
        let a0 = p.log_alpha_at(0.0).exp();
        assert_relative_eq!(a0, 0.3149803, epsilon = 1e-7);
        let ratio = (p.log_alpha_at(1.0) - p.log_alpha_at(0.0)).exp();
        assert_relative_eq!(ratio, 1f64.cosh().powi(5), max_relative = 1e-13);
        assert_relative_eq!(ratio, 8.7486916, epsilon = 1e-6);
        let norm = LeftonParams::new(-3.0, 0.5, 0.0).unwrap();
        assert_relative_eq!(norm.log_alpha_at(0.0).exp(), 1.0);
    }

    #[test]
    fn alpha_clamps_near_boundary() {
        let g = Grid::new(400.0, 64).unwrap();
        let w = weight_alpha(&g, &p3());
        assert!(w.is_clamped());
        assert!(w.values.is_finite());
        let g = Grid::new(80.0, 64).unwrap();
        assert!(!weight_alpha(&g, &p3()).is_clamped());
    }

    #[test]
    fn window_from_ratio() {
        let p = p3();
        let w = p.alpha_window(1e10);
        assert_relative_eq!(w, 100f64.acosh(), max_relative = 1e-12);
        assert!(p.check_window(12.0).is_ok());
        assert!(p.check_window(1e4).is_err());
    }

    #[test]
    fn psi_values() {
        let p = p3();
        let psi = PsiL::new(&p);
        assert_relative_eq!(psi.value(0.0), 0.5);
        assert!((psi.value(500.0) - 1.0).abs() < 1e-15);
        assert_relative_eq!(psi.d1(0.0), 1.0 / (6.0 * PI), max_relative = 1e-14);
        assert_relative_eq!(1.0 / (6.0 * PI), 0.0530516, epsilon = 1e-7);
    }

    #[test]
    fn sq_values() {
        let p = p3();
        assert!(p.sq_at(0.0).abs() < 1e-14);
        let g = Grid::new(80.0, 4096).unwrap();
        let i = g.integrate(&profile_sq(&g, &p)).unwrap();
        assert_relative_eq!(i, -8.0 * PI / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn localizer_and_peakon() {
        let p = p3();
        assert_relative_eq!(localizer_phi_m(0.0, 3.0, 2.0, &p).unwrap(), 18.0);
        assert!(localizer_phi_m(1e4, 0.0, 2.0, &p).unwrap() < 1e-100);
        assert!(localizer_phi_m(0.0, 0.0, 1.0, &p).is_err());
        assert_relative_eq!(localizer_phi_m(1.0, 0.0, 1e12, &p).unwrap(), 18.0, max_relative = 1e-12);
        assert_eq!(peakon_u(0.0, 0.0, 1.0), 1.0);
        assert_eq!(peakon_u(3.0, 1.5, 2.0), 2.0);
        assert_relative_eq!(peakon_u(4.0, 1.5, 2.0), 0.7357589, epsilon = 1e-7);
    }

    #[test]
    fn default_m_uses_the_largest_candidate() {
        let p = p3();
        let m = default_localizer_m(&p, 0.01);
        assert_relative_eq!(m, 32.0 * 4.0 / 0.01);
        assert_eq!(default_localizer_m(&p, 1e6), 1.0);
    }
}
