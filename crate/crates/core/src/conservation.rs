//! Conserved functionals `E`, `F₁`, `F₂`, the variation of `F₂`, and weighted norms.
//!
//! `F₂` is evaluated through the root density `g = m^s`, `s = -1/(2b)`, for
//! which the integrand becomes `g² + 4g_x²`. The gradient term then never
//! divides by the exponentially small tails of `m`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::profiles::LeftonParams;

/// Denominator floor for relative drifts.
pub const DRIFT_FLOOR: f64 = 1e-30;

fn check_positive(m: &[f64]) -> Result<()> {
    match m.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        None => Ok(()),
        Some((index, &min)) if min.is_finite() => Err(Error::NonPositive { min, index }),
        Some(_) => Err(Error::NonFinite { context: "momentum density" }),
    }
}

/// Root density exponent `-1/(2b)`.
pub fn root_exponent(b: f64) -> f64 {
    -0.5 / b
}

/// `g = m^(-1/(2b))`; requires positive `m`.
pub fn root_density(m: &[f64], b: f64) -> Result<Field> {
    check_positive(m)?;
    let s = root_exponent(b);
    Ok(m.iter().map(|v| v.powf(s)).collect())
}

/// `E = ∫ m`.
pub fn invariant_e(grid: &Grid, m: &[f64]) -> f64 {
    grid.sum(m)
}

/// Value of `F₁ = ∫ m^(1/b)`, flagged when the functional diverges on the line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Value {
    /// Quadrature over the truncated domain.
    pub value: f64,
    /// True for b < 0, where the integrand grows in the tails.
    pub diverges: bool,
    pub warning: Option<String>,
}

pub fn invariant_f1(grid: &Grid, m: &[f64], b: f64) -> Result<F1Value> {
    check_positive(m)?;
    if b == 0.0 {
        return Err(Error::InvalidParameter("F1 is undefined at b = 0".into()));
    }
    let e = 1.0 / b;
    let value = grid.dx() * m.iter().map(|v| v.powf(e)).sum::<f64>();
    let diverges = b < 0.0;
    let warning = diverges.then(|| {
        format!("F1 diverges for b = {b}; {value:.6e} is the truncated-domain value only")
    });
    Ok(F1Value { value, diverges, warning })
}

/// `F₂ = ∫ m^(-1/b) (m_x²/(b²m²) + 1)`.
pub fn invariant_f2(grid: &Grid, m: &[f64], b: f64) -> Result<f64> {
    if b == 0.0 {
        return Err(Error::InvalidParameter("F2 is undefined at b = 0".into()));
    }
    let g = root_density(m, b)?;
    Ok(f2_from_root(grid, &g))
}

/// `∫ (g² + 4 g_x²)` for a root density `g`.
pub fn f2_from_root(grid: &Grid, g: &[f64]) -> f64 {
    let (value, gradient) = f2_pieces(grid, g, None);
    value + gradient
}

/// `(∫ g² w, ∫ 4 g_x² w)`, with `w ≡ 1` when no weight is given.
pub fn f2_pieces(grid: &Grid, g: &[f64], weight: Option<&[f64]>) -> (f64, f64) {
    let gx = grid.diff(g, 1);
    let w = |i: usize| weight.map_or(1.0, |w| w[i]);
    let value = (0..g.len()).map(|i| g[i] * g[i] * w(i)).sum::<f64>();
    let gradient = (0..g.len()).map(|i| 4.0 * gx[i] * gx[i] * w(i)).sum::<f64>();
    (grid.dx() * value, grid.dx() * gradient)
}

/// Euler–Lagrange derivative `δF₂/δm = s m^(s-1) (2g - 8 g_xx)`.
pub fn variation_f2(grid: &Grid, m: &[f64], b: f64) -> Result<Field> {
    if b == 0.0 {
        return Err(Error::InvalidParameter("F2 is undefined at b = 0".into()));
    }
    let s = root_exponent(b);
    let g = root_density(m, b)?;
    let gxx = grid.diff(&g, 2);
    Ok(m
        .iter()
        .zip(g.iter().zip(gxx.iter()))
        .map(|(&mv, (&gv, &d2))| s * gv / mv * (2.0 * gv - 8.0 * d2))
        .collect())
}

/// Unweighted `H¹` norm.
pub fn h1_norm(grid: &Grid, f: &[f64]) -> f64 {
    let fx = grid.diff(f, 1);
    (grid.dot(f, f) + grid.dot(&fx, &fx)).sqrt()
}

/// Windowed weighted norms of a field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub h1_alpha: f64,
    pub k_z: f64,
    pub window: f64,
}

/// Sample indices with `|x - centre| ≤ window`.
pub fn window_indices(grid: &Grid, centre: f64, window: f64) -> Vec<usize> {
    (0..grid.len()).filter(|&i| (grid.x(i) - centre).abs() <= window).collect()
}

/// `(∫_{|x-x*|≤W} (f² + f_x²) α)^(1/2)` and `max_{|x-x*|≤W} |f|/Q`.
pub fn norms(grid: &Grid, f: &[f64], p: &LeftonParams, window: f64) -> Result<Norms> {
    p.check_window(window)?;
    if f.len() != grid.len() {
        return Err(Error::LengthMismatch { expected: grid.len(), got: f.len() });
    }
    if !f.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "norm input" });
    }
    let fx = grid.diff(f, 1);
    let idx = window_indices(grid, p.x_star, window);
    let h1 = idx
        .iter()
        .map(|&i| {
            let x = grid.x(i);
            (f[i] * f[i] + fx[i] * fx[i]) * p.log_alpha_at(x).exp()
        })
        .sum::<f64>()
        * grid.dx();
    let k_z = idx
        .iter()
        .map(|&i| f[i].abs() / p.big_q_at(grid.x(i)))
        .fold(0.0, f64::max);
    Ok(Norms { h1_alpha: h1.sqrt(), k_z, window })
}

/// Time series of the conserved functionals with drifts from the first entry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantSeries {
    pub times: Vec<f64>,
    pub e: Vec<f64>,
    pub f1: Vec<f64>,
    pub f1_flag: Vec<bool>,
    pub f2: Vec<f64>,
    pub drift_e: Vec<f64>,
    pub drift_f2: Vec<f64>,
}

fn drift(v: f64, v0: f64) -> f64 {
    (v - v0).abs() / v0.abs().max(DRIFT_FLOOR)
}

impl InvariantSeries {
    /// Records one snapshot; `F₁`/`F₂` are NaN when `m` is not positive.
    pub fn record(&mut self, grid: &Grid, t: f64, m: &[f64], b: f64) {
        let e = invariant_e(grid, m);
        let (f1, flag) = match invariant_f1(grid, m, b) {
            Ok(v) => (v.value, v.diverges),
            Err(_) => (f64::NAN, true),
        };
        let f2 = invariant_f2(grid, m, b).unwrap_or(f64::NAN);
        self.push(t, e, f1, flag, f2);
    }

    pub fn push(&mut self, t: f64, e: f64, f1: f64, f1_flag: bool, f2: f64) {
        let e0 = self.e.first().copied().unwrap_or(e);
        let f20 = self.f2.first().copied().unwrap_or(f2);
        self.times.push(t);
        self.e.push(e);
        self.f1.push(f1);
        self.f1_flag.push(f1_flag);
        self.f2.push(f2);
        self.drift_e.push(drift(e, e0));
        self.drift_f2.push(drift(f2, f20));
    }

    pub fn max_drift_e(&self) -> f64 {
        self.drift_e.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_drift_f2(&self) -> f64 {
        self.drift_f2.iter().copied().fold(0.0, f64::max)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}
