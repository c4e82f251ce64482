//! Periodic uniform grid with Fourier collocation operators.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Deref, DerefMut, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary-to-peak ratio below which a field counts as effectively periodic.
pub const DECAY_FLOOR: f64 = 1e-10;

/// Serializable description of a grid: span and sample count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub length: f64,
    pub count: usize,
}

/// Samples `x_i = -length/2 + i*dx` on a periodic domain, with cached FFT plans.
#[derive(Clone)]
pub struct Grid {
    length: f64,
    n: usize,
    dx: f64,
    xi: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("length", &self.length)
            .field("n", &self.n)
            .field("dx", &self.dx)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.length == other.length && self.n == other.n
    }
}

/// Real samples on a [`Grid`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn new(values: Vec<f64>) -> Self {
        Field(values)
    }

    pub fn zeros(n: usize) -> Self {
        Field(vec![0.0; n])
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Field(vec![c; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.len(), other.len());
        Field(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Field) -> Field {
        self.zip_map(other, |a, b| a + c * b)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Minimum value and its index.
    pub fn min_with_index(&self) -> (f64, usize) {
        self.0
            .iter()
            .enumerate()
            .fold((f64::INFINITY, 0), |(m, k), (i, &v)| if v < m { (v, i) } else { (m, k) })
    }

    pub fn argmax(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .fold((f64::NEG_INFINITY, 0), |(m, k), (i, &v)| if v > m { (v, i) } else { (m, k) })
            .1
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { context })
        }
    }
}

impl Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Field {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Field {
    fn from(v: Vec<f64>) -> Self {
        Field(v)
    }
}

impl FromIterator<f64> for Field {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Field(iter.into_iter().collect())
    }
}

impl<'a> Add<&'a Field> for &'a Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl<'a> Sub<&'a Field> for &'a Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a - b)
    }
}

/// Pointwise product.
impl<'a> Mul<&'a Field> for &'a Field {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl Mul<&Field> for f64 {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        rhs.scale(self)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.scale(-1.0)
    }
}

impl Grid {
    /// Builds a grid of `count` samples spanning `[-length/2, length/2)`.
    pub fn new(length: f64, count: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::BadLength(length));
        }
        if count < 8 || !count.is_multiple_of(2) {
            return Err(Error::BadCount(count));
        }
        let dx = length / count as f64;
        let base = 2.0 * PI / length;
        let half = (count / 2) as isize;
        let xi = (0..count as isize)
            .map(|j| if j < half { j } else { j - count as isize })
            .map(|j| base * j as f64)
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Grid {
            length,
            n: count,
            dx,
            xi,
            fwd: planner.plan_fft_forward(count),
            inv: planner.plan_fft_inverse(count),
        })
    }

    pub fn from_spec(spec: GridSpec) -> Result<Self> {
        Grid::new(spec.length, spec.count)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { length: self.length, count: self.n }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn x(&self, i: usize) -> f64 {
        -0.5 * self.length + i as f64 * self.dx
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.x(i))
    }

    /// Wavenumbers in FFT order (0, 1, ..., N/2-1, -N/2, ..., -1) times 2π/Λ.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.xi
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Field {
        self.points().map(f).collect()
    }

    fn check(&self, f: &[f64], context: &'static str) -> Result<()> {
        if f.len() != self.n {
            return Err(Error::LengthMismatch { expected: self.n, got: f.len() });
        }
        if f.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { context })
        }
    }

    pub fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    /// Inverse transform keeping the real part, normalized by 1/N.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Field {
        self.inv.process(&mut spec);
        let s = 1.0 / self.n as f64;
        spec.into_iter().map(|c| c.re * s).collect()
    }

    /// Applies a Fourier multiplier `symbol(j, ξ_j)`.
    pub fn apply_symbol(&self, f: &[f64], symbol: impl Fn(usize, f64) -> Complex64) -> Field {
        let mut spec = self.forward(f);
        for (j, (c, &k)) in spec.iter_mut().zip(&self.xi).enumerate() {
            *c *= symbol(j, k);
        }
        self.inverse(spec)
    }

    fn is_nyquist(&self, j: usize) -> bool {
        j == self.n / 2
    }

    /// Collocation derivative of the given order. Odd orders drop the Nyquist mode.
    pub fn derivative(&self, f: &[f64], order: u32) -> Result<Field> {
        if order == 0 {
            return Err(Error::BadOrder);
        }
        self.check(f, "derivative input")?;
        Ok(self.diff(f, order))
    }

    /// Unchecked derivative for internal hot loops.
    pub(crate) fn diff(&self, f: &[f64], order: u32) -> Field {
        let odd = order % 2 == 1;
        self.apply_symbol(f, |j, k| {
            if odd && self.is_nyquist(j) {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, k).powu(order)
            }
        })
    }

    /// Solves `(1 - ∂²)u = m` by division by `1 + ξ²`.
    pub fn helmholtz_inverse(&self, m: &[f64]) -> Result<Field> {
        self.check(m, "Helmholtz input")?;
        Ok(self.helm(m))
    }

    pub(crate) fn helm(&self, m: &[f64]) -> Field {
        self.apply_symbol(m, |_, k| Complex64::new(1.0 / (1.0 + k * k), 0.0))
    }

    /// Applies `(1 - ∂²)`.
    pub fn helmholtz(&self, u: &[f64]) -> Field {
        self.apply_symbol(u, |_, k| Complex64::new(1.0 + k * k, 0.0))
    }

    /// Same inverse as [`Grid::helmholtz_inverse`] computed in physical space:
    /// rectangle-rule convolution with the periodized Green's function
    /// `cosh(Λ/2 - |z|) / (2 sinh(Λ/2))`, corrected for the kernel's derivative
    /// jumps at the collocation point (Euler–Maclaurin terms through h⁶).
    pub fn helmholtz_convolution(&self, m: &[f64]) -> Result<Field> {
        self.check(m, "Helmholtz input")?;
        let n = self.n;
        let h = self.dx;
        let half = 0.5 * self.length;
        // cosh(half - d)/(2 sinh(half)) written with exponentials so large Λ cannot overflow.
        let kernel: Vec<f64> = (0..n)
            .map(|k| {
                let d = (k.min(n - k)) as f64 * h;
                let num = (-d).exp() + (d - 2.0 * half).exp();
                0.5 * num / (1.0 - (-2.0 * half).exp())
            })
            .collect();
        let at = |i: isize| m[i.rem_euclid(n as isize) as usize];
        let out = (0..n)
            .map(|i| {
                let sum: f64 = (0..n).map(|j| kernel[(i + n - j) % n] * m[j]).sum::<f64>() * h;
                let ii = i as isize;
                let d2 = (-at(ii - 2) + 16.0 * at(ii - 1) - 30.0 * at(ii) + 16.0 * at(ii + 1)
                    - at(ii + 2))
                    / (12.0 * h * h);
                let d4 = (at(ii - 2) - 4.0 * at(ii - 1) + 6.0 * at(ii) - 4.0 * at(ii + 1)
                    + at(ii + 2))
                    / h.powi(4);
                let j1 = at(ii);
                let j3 = 3.0 * d2 + j1;
                let j5 = 5.0 * d4 + 10.0 * d2 + j1;
                sum - h * h / 12.0 * j1 + h.powi(4) / 720.0 * j3 - h.powi(6) / 30240.0 * j5
            })
            .collect();
        Ok(out)
    }

    /// Rectangle-rule quadrature `Δx Σ f_i`.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        self.check(f, "integrand")?;
        Ok(self.sum(f))
    }

    pub(crate) fn sum(&self, f: &[f64]) -> f64 {
        self.dx * f.iter().sum::<f64>()
    }

    /// Discrete L² inner product.
    pub fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        self.dx * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Zeroes modes with |j| > N/3 (the two-thirds rule).
    pub fn dealias(&self, f: &[f64]) -> Field {
        let cutoff = self.n / 3;
        let n = self.n;
        self.apply_symbol(f, |j, _| {
            let jj = j.min(n - j);
            if jj > cutoff {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
    }

    /// Band-limited translate: returns samples of `f(x + s)`.
    pub fn shift(&self, f: &[f64], s: f64) -> Field {
        self.apply_symbol(f, |j, k| {
            if self.is_nyquist(j) {
                Complex64::new((k * s).cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, k * s)
            }
        })
    }

    /// Ratio of the boundary magnitude to the peak magnitude.
    pub fn boundary_ratio(&self, f: &[f64]) -> f64 {
        let peak = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return 0.0;
        }
        let edge = f[0].abs().max(f[self.n - 1].abs());
        edge / peak
    }

    /// Warning text when a field is not negligible at the domain boundary.
    pub fn periodicity_warning(&self, f: &[f64], name: &str) -> Option<String> {
        let r = self.boundary_ratio(f);
        (r > DECAY_FLOOR).then(|| {
            format!("{name} reaches the periodic boundary (edge/peak = {r:.3e}); wraparound may matter")
        })
    }

    /// Index of the sample nearest to `x` (periodically wrapped).
    pub fn nearest_index(&self, x: f64) -> usize {
        let t = ((x + 0.5 * self.length) / self.dx).round() as isize;
        t.rem_euclid(self.n as isize) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spacing_and_origin() {
        let g = Grid::new(80.0, 8).unwrap();
        assert_eq!(g.dx(), 10.0);
        assert_eq!(g.x(0), -40.0);
        let g = Grid::new(80.0, 4096).unwrap();
        assert_abs_diff_eq!(g.dx(), 0.01953125, epsilon = 1e-16);
    }

    #[test]
    fn unit_circle_wavenumbers() {
        let g = Grid::new(2.0 * PI, 8).unwrap();
        let k = g.wavenumbers();
        let expected = [0.0, 1.0, 2.0, 3.0, -4.0, -3.0, -2.0, -1.0];
        for (a, b) in k.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert_eq!(Grid::new(1.0, 7).unwrap_err(), Error::BadCount(7));
        assert_eq!(Grid::new(1.0, 6).unwrap_err(), Error::BadCount(6));
        assert_eq!(Grid::new(0.0, 8).unwrap_err(), Error::BadLength(0.0));
        assert!(Grid::new(-3.0, 8).is_err());
    }

    #[test]
    fn derivative_of_sine() {
        let g = Grid::new(80.0, 256).unwrap();
        let w = 2.0 * PI / 80.0;
        let f = g.sample(|x| (w * x).sin());
        let d = g.derivative(&f, 1).unwrap();
        for (i, v) in d.iter().enumerate() {
            assert_abs_diff_eq!(*v, w * (w * g.x(i)).cos(), epsilon = 1e-12);
        }
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let g = Grid::new(10.0, 64).unwrap();
        let f = Field::constant(64, 3.5);
        for order in 1..=4 {
            assert!(g.derivative(&f, order).unwrap().max_abs() < 1e-12);
        }
        assert_eq!(g.derivative(&f, 0).unwrap_err(), Error::BadOrder);
    }

    #[test]
    fn derivative_rejects_non_finite() {
        let g = Grid::new(10.0, 8).unwrap();
        let mut f = Field::zeros(8);
        f[3] = f64::NAN;
        assert!(matches!(g.derivative(&f, 1), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn helmholtz_single_mode_and_constant() {
        let g = Grid::new(80.0, 128).unwrap();
        let w = 2.0 * PI / 80.0;
        let m = g.sample(|x| (w * x).cos());
        let u = g.helmholtz_inverse(&m).unwrap();
        for (i, v) in u.iter().enumerate() {
            assert_abs_diff_eq!(*v, (w * g.x(i)).cos() / (1.0 + w * w), epsilon = 1e-14);
        }
        let c = g.helmholtz_inverse(&Field::constant(128, 2.5)).unwrap();
        assert!(c.iter().all(|v| (v - 2.5).abs() < 1e-13));
    }

    #[test]
    fn convolution_matches_fourier_division() {
        let g = Grid::new(40.0, 512).unwrap();
        let m = g.sample(|x| (-(x - 1.0) * (x - 1.0)).exp() + 0.5 / (x + 2.0).cosh());
        let a = g.helmholtz_inverse(&m).unwrap();
        let b = g.helmholtz_convolution(&m).unwrap();
        let err = (&a - &b).max_abs() / a.max_abs();
        assert!(err < 1e-8, "relative mismatch {err:e}");
    }

    #[test]
    fn integrate_simple() {
        let g = Grid::new(80.0, 4096).unwrap();
        assert_eq!(g.integrate(&Field::zeros(4096)).unwrap(), 0.0);
        let s = g.sample(|x| (2.0 * PI * x / 80.0).sin());
        assert!(g.integrate(&s).unwrap().abs() < 1e-14);
    }

    #[test]
    fn shift_translates_band_limited_data() {
        let g = Grid::new(80.0, 1024).unwrap();
        let f = g.sample(|x| (-x * x / 4.0).exp());
        let s = g.shift(&f, 0.37);
        for (i, v) in s.iter().enumerate() {
            let x = g.x(i) + 0.37;
            assert_abs_diff_eq!(*v, (-x * x / 4.0).exp(), epsilon = 1e-13);
        }
    }

    #[test]
    fn boundary_warning_only_for_non_decaying_data() {
        let g = Grid::new(80.0, 512).unwrap();
        let f = g.sample(|x| (-x * x).exp());
        assert!(g.periodicity_warning(&f, "f").is_none());
        let r = g.sample(|x| 1.0 + 0.1 * x);
        assert!(g.periodicity_warning(&r, "ramp").is_some());
    }
}
