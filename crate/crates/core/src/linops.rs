//! Operators linearized about the lefton.
//!
//! `L` is handled through its Schrödinger form `H = (2k/b²)(-∂² + H̃₀)` with
//! `L f = √α H(√α f)`. Every entry of `H` and every H-frame field is bounded,
//! whereas `α` grows like `cosh^(-(2b+1)/ν)`. So identities that involve `L`
//! are measured on an identity window where `α/α(x*)` is at most
//! [`IDENTITY_ALPHA_RATIO`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::conservation::window_indices;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, GridSpec};
use crate::profiles::{sqrt_alpha, LeftonParams};

/// α-growth bound defining the identity window.
pub const IDENTITY_ALPHA_RATIO: f64 = 1e8;

/// Relative mean above which the `(∂-∂³)⁻¹` zero mode is flagged.
pub const ZERO_MODE_TOLERANCE: f64 = 1e-10;

/// Centre-to-edge decay required to call an eigenvalue discrete.
pub const DISCRETE_DECAY: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    /// Periodic Fourier collocation.
    Fourier,
    /// Fourth-order central differences, zero outside the window.
    Fd4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    H,
    L,
    B,
    BL,
    LB,
}

/// Dense discretization on a set of sample points.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub matrix: DMatrix<f64>,
    pub symmetric: bool,
    pub kind: OperatorKind,
    pub discretization: Discretization,
    pub points: Vec<f64>,
    pub dx: f64,
}

impl OperatorMatrix {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// `max|M - Mᵀ| / max|M|`.
    pub fn symmetry_residual(&self) -> f64 {
        let m = &self.matrix;
        let scale = m.amax().max(f64::MIN_POSITIVE);
        (m - m.transpose()).amax() / scale
    }

    pub fn apply(&self, f: &[f64]) -> Field {
        let v = DVector::from_column_slice(f);
        (&self.matrix * v).iter().copied().collect()
    }
}

/// `1/4 - (b(1+2b)/4) sech²(ν(x-x*))`.
pub fn potential_h0(x: f64, p: &LeftonParams) -> f64 {
    0.25 - p.b * (1.0 + 2.0 * p.b) / 4.0 * p.sech2_at(x)
}

/// `2k/b²`.
pub fn h_prefactor(p: &LeftonParams) -> f64 {
    2.0 * p.k() / (p.b * p.b)
}

/// Circulant matrix with first column `col`.
fn circulant(col: &[f64]) -> DMatrix<f64> {
    let n = col.len();
    DMatrix::from_fn(n, n, |i, j| col[(i + n - j) % n])
}

/// Collocation matrix of `∂^order` on the periodic grid.
pub fn fourier_derivative_matrix(grid: &Grid, order: u32) -> DMatrix<f64> {
    let mut e = vec![0.0; grid.len()];
    e[0] = 1.0;
    circulant(&grid.diff(&e, order))
}

fn fd4_second_derivative(n: usize, h: f64) -> DMatrix<f64> {
    let c = 1.0 / (12.0 * h * h);
    DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => -30.0 * c,
        1 => 16.0 * c,
        2 => -c,
        _ => 0.0,
    })
}

/// Sample points and `-∂²` for a discretization on `grid`.
fn laplacian(grid: &Grid, disc: Discretization) -> DMatrix<f64> {
    match disc {
        Discretization::Fourier => -fourier_derivative_matrix(grid, 2),
        Discretization::Fd4 => -fd4_second_derivative(grid.len(), grid.dx()),
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// `H = (2k/b²)(-∂² + H̃₀)` on every sample of `grid`.
pub fn assemble_h(grid: &Grid, p: &LeftonParams, disc: Discretization) -> OperatorMatrix {
    let mut m = laplacian(grid, disc);
    for (i, x) in grid.points().enumerate() {
        m[(i, i)] += potential_h0(x, p);
    }
    m *= h_prefactor(p);
    symmetrize(&mut m);
    OperatorMatrix {
        matrix: m,
        symmetric: true,
        kind: OperatorKind::H,
        discretization: disc,
        points: grid.points().collect(),
        dx: grid.dx(),
    }
}

/// `L = √α H √α` restricted to `|x - x*| ≤ window`.
pub fn assemble_l(grid: &Grid, p: &LeftonParams, window: f64) -> Result<OperatorMatrix> {
    p.check_window(window)?;
    let h = assemble_h(grid, p, Discretization::Fourier);
    let idx = window_indices(grid, p.x_star, window);
    let sa: Vec<f64> = idx.iter().map(|&i| (0.5 * p.log_alpha_at(grid.x(i))).exp()).collect();
    let n = idx.len();
    let mut m = DMatrix::from_fn(n, n, |a, c| sa[a] * h.matrix[(idx[a], idx[c])] * sa[c]);
    symmetrize(&mut m);
    Ok(OperatorMatrix {
        matrix: m,
        symmetric: true,
        kind: OperatorKind::L,
        discretization: Discretization::Fourier,
        points: idx.iter().map(|&i| grid.x(i)).collect(),
        dx: grid.dx(),
    })
}

/// Spectral `H f`.
pub fn apply_h(grid: &Grid, f: &[f64], p: &LeftonParams) -> Field {
    let fxx = grid.diff(f, 2);
    let c = h_prefactor(p);
    grid.points()
        .enumerate()
        .map(|(i, x)| c * (-fxx[i] + potential_h0(x, p) * f[i]))
        .collect()
}

/// Spectral `L v = √α H(√α v)`.
pub fn apply_l(grid: &Grid, v: &[f64], p: &LeftonParams) -> Field {
    let sa = sqrt_alpha(grid, p).values;
    let inner: Field = v.iter().zip(sa.iter()).map(|(a, b)| a * b).collect();
    let h = apply_h(grid, &inner, p);
    h.iter().zip(sa.iter()).map(|(a, b)| a * b).collect()
}

/// `bQ v_x + (b-1) Q' v`, the inner factor of `B(Q)`.
pub fn b_inner_factor(grid: &Grid, v: &[f64], p: &LeftonParams) -> Field {
    let vx = grid.diff(v, 1);
    let b = p.b;
    grid.points()
        .enumerate()
        .map(|(i, x)| b * p.big_q_at(x) * vx[i] + (b - 1.0) * p.big_q_prime_at(x) * v[i])
        .collect()
}

/// `C(√α ṽ)` evaluated without forming `√α ṽ`:
/// `Q√α [b(ṽ' - ((1+2b)/2) T ṽ) + (b-1) b T ṽ]` with `T = tanh(ν(x-x*))`.
pub fn b_inner_factor_scaled(grid: &Grid, vt: &[f64], p: &LeftonParams) -> Field {
    let vx = grid.diff(vt, 1);
    let b = p.b;
    let c = (1.0 + 2.0 * b) / 2.0;
    grid.points()
        .enumerate()
        .map(|(i, x)| {
            let t = p.tanh_at(x);
            p.big_q_pow_at(x, -0.5 / b) * (b * (vx[i] - c * t * vt[i]) + (b - 1.0) * b * t * vt[i])
        })
        .collect()
}

/// Result of applying `B(Q)`, with the zero-mode diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct BOutput {
    pub value: Field,
    /// Mean of the inner factor relative to its sup norm.
    pub relative_mean: f64,
    pub zero_mode_flag: bool,
}

/// `φ = (∂ - ∂³)⁻¹ w` on the mean-free part, pinned to vanish at the domain
/// edge (the decaying branch on the line).
fn inverse_middle(grid: &Grid, w: &[f64]) -> (Field, f64) {
    let mean = grid.sum(w) / grid.length();
    let sup = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let relative_mean = mean.abs() / sup.max(f64::MIN_POSITIVE);
    let nyq = grid.len() / 2;
    let periodic = grid.apply_symbol(w, |j, k| {
        if j == 0 || j == nyq {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, -1.0 / (k * (1.0 + k * k)))
        }
    });
    (periodic.map(|v| v - periodic[0]), relative_mean)
}

/// Outer factor `-(bQ∂ + Q')φ = -bQ(φ' + Tφ)`, optionally premultiplied by `√α`.
fn outer_factor(grid: &Grid, phi: &[f64], p: &LeftonParams, scaled: bool) -> Field {
    let d = grid.diff(phi, 1);
    let b = p.b;
    let e = if scaled { -0.5 / b } else { 1.0 };
    grid.points()
        .enumerate()
        .map(|(i, x)| -b * p.big_q_pow_at(x, e) * (d[i] + p.tanh_at(x) * phi[i]))
        .collect()
}

fn finish(grid: &Grid, w: &[f64], p: &LeftonParams, scaled: bool) -> BOutput {
    let (phi, relative_mean) = inverse_middle(grid, w);
    BOutput {
        value: outer_factor(grid, &phi, p, scaled),
        relative_mean,
        zero_mode_flag: relative_mean > ZERO_MODE_TOLERANCE,
    }
}

fn check_input(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { context: "B(Q) input" })
    }
}

/// `B(Q) v = -(bQ∂ + Q')(∂ - ∂³)⁻¹(bQ∂ + (b-1)Q') v`.
pub fn apply_b_of_q(grid: &Grid, v: &[f64], p: &LeftonParams) -> Result<BOutput> {
    check_input(v)?;
    Ok(finish(grid, &b_inner_factor(grid, v, p), p, false))
}

/// `√α B(Q) v`, the H-frame image of `B(Q) v`.
pub fn apply_b_of_q_scaled(grid: &Grid, v: &[f64], p: &LeftonParams) -> Result<BOutput> {
    check_input(v)?;
    Ok(finish(grid, &b_inner_factor(grid, v, p), p, true))
}

/// `B(Q)(L v)` by composition, passing `L v = √α H(√α v)` in H-frame form.
pub fn apply_bl_composed(grid: &Grid, v: &[f64], p: &LeftonParams) -> Result<BOutput> {
    check_input(v)?;
    let sa = sqrt_alpha(grid, p).values;
    let eta = apply_h(grid, &(&sa * &Field::new(v.to_vec())), p);
    Ok(finish(grid, &b_inner_factor_scaled(grid, &eta, p), p, false))
}

/// `L(B(Q) v)` by composition.
pub fn apply_lb_composed(grid: &Grid, v: &[f64], p: &LeftonParams) -> Result<BOutput> {
    let scaled = apply_b_of_q_scaled(grid, v, p)?;
    let sa = sqrt_alpha(grid, p).values;
    let value = &sa * &apply_h(grid, &scaled.value, p);
    Ok(BOutput { value, ..scaled })
}

/// Closed form of `B(Q) L v`.
pub fn apply_bl_closed(grid: &Grid, v: &[f64], p: &LeftonParams) -> Field {
    bl_terms(grid, v, p).into_iter().fold(Field::zeros(grid.len()), |acc, t| &acc + &t)
}

fn bl_terms(grid: &Grid, v: &[f64], p: &LeftonParams) -> [Field; 4] {
    let (b, k) = (p.b, p.k());
    let vx = grid.diff(v, 1);
    let h = grid.helm(v);
    let hx = grid.diff(&h, 1);
    let t = |f: &dyn Fn(usize, f64) -> f64| -> Field { grid.points().enumerate().map(|(i, x)| f(i, x)).collect() };
    [
        t(&|i, x| 2.0 * k * p.big_q_pow_at(x, -1.0 / b - 1.0) * p.big_q_prime_at(x) * v[i]),
        t(&|i, x| -2.0 * k * p.big_q_pow_at(x, -1.0 / b) * vx[i]),
        t(&|i, x| b * (b - 1.0) * p.big_q_at(x) * hx[i]),
        t(&|i, x| (b - 1.0) * p.big_q_prime_at(x) * h[i]),
    ]
}

/// Closed form of `L B(Q) v`.
pub fn apply_lb_closed(grid: &Grid, v: &[f64], p: &LeftonParams) -> Field {
    lb_terms(grid, v, p).into_iter().fold(Field::zeros(grid.len()), |acc, t| &acc + &t)
}

fn lb_terms(grid: &Grid, v: &[f64], p: &LeftonParams) -> [Field; 3] {
    let (b, k) = (p.b, p.k());
    let vx = grid.diff(v, 1);
    let inner = b_inner_factor(grid, v, p);
    let smooth = grid.helm(&inner);
    [
        grid.points()
            .enumerate()
            .map(|(i, x)| -2.0 * k * p.big_q_pow_at(x, -1.0 / b) * vx[i])
            .collect(),
        grid.points()
            .enumerate()
            .map(|(i, x)| {
                2.0 * k * (1.0 - b) / b * p.big_q_pow_at(x, -1.0 / b - 1.0) * p.big_q_prime_at(x) * v[i]
            })
            .collect(),
        smooth.scale(b - 1.0),
    ]
}

/// Removes the `Q'` component so that `∫Q' v = 0`, which keeps the inner
/// factor of `B(Q)` mean-free.
pub fn project_out_translation(grid: &Grid, v: &[f64], p: &LeftonParams) -> Field {
    let qp = grid.sample(|x| p.big_q_prime_at(x));
    let c = grid.dot(&qp, v) / grid.dot(&qp, &qp);
    Field::new(v.to_vec()).axpy(-c, &qp)
}

/// Half-width of the identity window for `p`, capped by the domain.
pub fn identity_window(grid: &Grid, p: &LeftonParams) -> f64 {
    p.alpha_window(IDENTITY_ALPHA_RATIO).min(0.5 * grid.length() - 2.0 * grid.dx())
}

fn sup_on(idx: &[usize], f: &[f64]) -> f64 {
    idx.iter().map(|&i| f[i].abs()).fold(0.0, f64::max)
}

/// `max_W |a - b| / scale`.
fn rel_residual(idx: &[usize], a: &[f64], b: &[f64], scale: f64) -> f64 {
    let d = idx.iter().map(|&i| (a[i] - b[i]).abs()).fold(0.0, f64::max);
    d / scale.max(f64::MIN_POSITIVE)
}

/// Relative residuals of the two composition identities on one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositionResidual {
    pub bl: f64,
    pub lb: f64,
    pub bl_zero_mode: bool,
    pub lb_zero_mode: bool,
}

/// Compares the closed forms with `B(Q)∘L` and `L∘B(Q)` for one field.
/// `v` should satisfy `∫Q'v = 0` (see [`project_out_translation`]).
pub fn composition_residual(grid: &Grid, v: &[f64], p: &LeftonParams) -> Result<CompositionResidual> {
    let idx = window_indices(grid, p.x_star, identity_window(grid, p));
    let bl_closed = apply_bl_closed(grid, v, p);
    let bl_route = apply_bl_composed(grid, v, p)?;
    let lb_closed = apply_lb_closed(grid, v, p);
    let lb_route = apply_lb_composed(grid, v, p)?;
    Ok(CompositionResidual {
        bl: rel_residual(&idx, &bl_closed, &bl_route.value, sup_on(&idx, &bl_closed)),
        lb: rel_residual(&idx, &lb_closed, &lb_route.value, sup_on(&idx, &lb_closed)),
        bl_zero_mode: bl_route.zero_mode_flag,
        lb_zero_mode: lb_route.zero_mode_flag,
    })
}

/// Eigen-decomposition summary checked against the closed-form spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    pub b: f64,
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub discretization: Discretization,
    pub size: usize,
    pub dx: f64,
    /// Lowest eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    pub discrete: Vec<bool>,
    /// Centre-to-edge decay ratio of each reported eigenvector.
    pub decay: Vec<f64>,
    pub residuals: Vec<f64>,
    pub lambda0: f64,
    pub lambda0_expected: f64,
    pub lambda0_rel_error: f64,
    pub ground_overlap: f64,
    pub kernel: f64,
    pub kernel_overlap: f64,
    pub discrete_count: usize,
    pub continuum_edge: Option<f64>,
    pub continuum_expected: f64,
    pub continuum_rel_error: Option<f64>,
}

/// `-k(1/2 - 1/(2b²))`.
pub fn expected_lambda0(p: &LeftonParams) -> f64 {
    -p.k() * (0.5 - 0.5 / (p.b * p.b))
}

/// `k/(2b²)`.
pub fn expected_continuum_edge(p: &LeftonParams) -> f64 {
    p.k() / (2.0 * p.b * p.b)
}

fn overlap(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot.abs() / (na * nb)).min(1.0)
}

fn edge_decay(v: &[f64]) -> f64 {
    let n = v.len();
    let band = (n / 20).max(1);
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let edge = v[..band].iter().chain(&v[n - band..]).fold(0.0f64, |m, x| m.max(x.abs()));
    peak / edge.max(f64::MIN_POSITIVE)
}

/// Sorted eigenpairs of a symmetric matrix.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Lowest `count` eigenpairs of an assembled `H`, compared with the closed forms.
pub fn spectrum_h(op: &OperatorMatrix, p: &LeftonParams, count: usize) -> Result<EigenReport> {
    if op.kind != OperatorKind::H || !op.symmetric {
        return Err(Error::Eigen("spectrum_h needs a symmetric H matrix".into()));
    }
    if op.size() < 3 {
        return Err(Error::Eigen("operator too small".into()));
    }
    let (vals, vecs) = sorted_eigen(&op.matrix);
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    let count = count.clamp(2, vals.len());
    let mut decay = Vec::with_capacity(count);
    let mut residuals = Vec::with_capacity(count);
    for c in 0..count {
        let v = vecs.column(c);
        decay.push(edge_decay(v.as_slice()));
        residuals.push((&op.matrix * v - v * vals[c]).norm());
    }
    let expected_edge = expected_continuum_edge(p);
    let discrete: Vec<bool> = (0..count)
        .map(|c| decay[c] >= DISCRETE_DECAY && vals[c] < expected_edge * (1.0 + 1e-9))
        .collect();
    let discrete_count = discrete.iter().take_while(|d| **d).count();
    let continuum_edge = (discrete_count < count).then(|| vals[discrete_count]);

    let ground: Vec<f64> = op
        .points
        .iter()
        .map(|&x| (0.5 * p.log_alpha_at(x) + (0.5 / p.b + 1.5) * p.log_big_q_at(x)).exp())
        .collect();
    let kernel_fn: Vec<f64> = op
        .points
        .iter()
        .map(|&x| (0.5 * p.log_alpha_at(x)).exp() * p.big_q_prime_at(x))
        .collect();
    let lambda0_expected = expected_lambda0(p);
    Ok(EigenReport {
        b: p.b,
        amplitude: p.amplitude,
        discretization: op.discretization,
        size: op.size(),
        dx: op.dx,
        eigenvalues: vals[..count].to_vec(),
        discrete,
        decay,
        residuals,
        lambda0: vals[0],
        lambda0_expected,
        lambda0_rel_error: ((vals[0] - lambda0_expected) / lambda0_expected).abs(),
        ground_overlap: overlap(vecs.column(0).as_slice(), &ground),
        kernel: vals[1],
        kernel_overlap: overlap(vecs.column(1).as_slice(), &kernel_fn),
        discrete_count,
        continuum_edge,
        continuum_expected: expected_edge,
        continuum_rel_error: continuum_edge.map(|e| ((e - expected_edge) / expected_edge).abs()),
    })
}

/// One row of the identity table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub b: f64,
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub grid: GridSpec,
    pub identity_window: f64,
    pub checks: Vec<IdentityCheck>,
    /// `∫ Q² SQ` by quadrature.
    pub q2_sq_integral: f64,
    /// `∫ (L⁻¹SQ) SQ` by an independent H-frame solve.
    pub inverse_sq_pairing: f64,
    pub spectral_condition_negative: bool,
    pub passed: bool,
}

/// Tolerance of the pointwise identities.
pub const IDENTITY_TOLERANCE: f64 = 1e-7;

/// Runs the identity suite on `grid` (dense solves: keep `N` modest).
pub fn verify_operator_identities(grid: &Grid, p: &LeftonParams) -> Result<VerificationReport> {
    let w = identity_window(grid, p);
    let idx = window_indices(grid, p.x_star, w);
    let interior = window_indices(grid, p.x_star, 0.8 * w);
    let b = p.b;
    let k = p.k();
    let sa = sqrt_alpha(grid, p).values;
    let prof = |f: &dyn Fn(f64) -> f64| grid.sample(f);
    let q = prof(&|x| p.big_q_at(x));
    let qp = prof(&|x| p.big_q_prime_at(x));
    let mut checks = Vec::new();
    let mut push = |name: &str, residual: f64| {
        checks.push(IdentityCheck {
            name: name.to_string(),
            residual,
            tolerance: IDENTITY_TOLERANCE,
            passed: residual <= IDENTITY_TOLERANCE,
        });
    };

    // H(√αQ) = -((1+b)/b) √α Q^(1/b+2)
    let f1 = &sa * &q;
    let lhs = apply_h(grid, &f1, p);
    let rhs = prof(&|x| -(1.0 + b) / b * (0.5 * p.log_alpha_at(x) + (1.0 / b + 2.0) * p.log_big_q_at(x)).exp());
    push("H(sqrt(alpha) Q)", rel_residual(&idx, &lhs, &rhs, sup_on(&idx, &rhs)));

    // H(√αQ²) = (2k(1-b)/b) √αQ² + (2(b-1)/b) √α Q^(1/b+3)
    let f2 = &f1 * &q;
    let lhs = apply_h(grid, &f2, p);
    let rhs = prof(&|x| {
        let sa = (0.5 * p.log_alpha_at(x)).exp();
        2.0 * k * (1.0 - b) / b * sa * p.big_q_at(x).powi(2)
            + 2.0 * (b - 1.0) / b * (0.5 * p.log_alpha_at(x) + (1.0 / b + 3.0) * p.log_big_q_at(x)).exp()
    });
    push("H(sqrt(alpha) Q^2)", rel_residual(&idx, &lhs, &rhs, sup_on(&idx, &rhs)));

    // H((2b/(b+1))√αQ + (x-x*)√αQ') = (2k/b) √αQ
    let f3 = prof(&|x| {
        let sa = (0.5 * p.log_alpha_at(x)).exp();
        2.0 * b / (b + 1.0) * sa * p.big_q_at(x) + (x - p.x_star) * sa * p.big_q_prime_at(x)
    });
    let lhs = apply_h(grid, &f3, p);
    let rhs = f1.scale(2.0 * k / b);
    push("H(scaling generator)", rel_residual(&interior, &lhs, &rhs, sup_on(&interior, &rhs)));

    // H(√αQ') = 0, relative to the size of the kinetic term
    let fk = &sa * &qp;
    let lhs = apply_h(grid, &fk, p);
    let kinetic = grid.diff(&fk, 2).scale(h_prefactor(p));
    push("H(sqrt(alpha) Q') = 0", sup_on(&idx, &lhs) / sup_on(&idx, &kinetic));

    // bQq' + qQ' = 0
    let a = prof(&|x| b * p.big_q_at(x) * p.q_prime_at(x));
    let c = prof(&|x| p.q_at(x) * p.big_q_prime_at(x));
    let s = &a + &c;
    push("bQq' + qQ' = 0", s.max_abs() / a.max_abs());

    // L(Q²) = SQ
    let sq = prof(&|x| p.sq_at(x));
    let lq2 = apply_l(grid, &(&q * &q), p);
    push("L(Q^2) = SQ", rel_residual(&idx, &lq2, &sq, sup_on(&idx, &sq)));

    // L(Q^(1/(2b)+3/2)) = λ₀ α Q^(1/(2b)+3/2)
    let e0 = 0.5 / b + 1.5;
    let ground = prof(&|x| p.big_q_pow_at(x, e0));
    let lhs = apply_l(grid, &ground, p);
    let rhs = prof(&|x| expected_lambda0(p) * (p.log_alpha_at(x) + e0 * p.log_big_q_at(x)).exp());
    push("L ground state", rel_residual(&idx, &lhs, &rhs, sup_on(&idx, &rhs)));

    // L B(Q)(1) = 0 through the closed form
    let ones = Field::constant(grid.len(), 1.0);
    let terms = lb_terms(grid, &ones, p);
    let total = terms.iter().fold(Field::zeros(grid.len()), |acc, t| &acc + t);
    let scale = terms.iter().map(|t| sup_on(&idx, t)).fold(0.0, f64::max);
    push("LB(Q)(const) = 0", sup_on(&idx, &total) / scale);

    // B(Q) L Q = 0, closed form and composition
    let terms = bl_terms(grid, &q, p);
    let total = terms.iter().fold(Field::zeros(grid.len()), |acc, t| &acc + t);
    let scale = terms.iter().map(|t| sup_on(&idx, t)).fold(0.0, f64::max);
    push("B(Q)L(Q) = 0", sup_on(&idx, &total) / scale);
    // L(Q) is the constant -(1+b)/b, which B(Q) annihilates
    let lq_const = -(1.0 + b) / b;
    let lq = apply_l(grid, &q, p);
    let flat = Field::constant(grid.len(), lq_const);
    push("L(Q) = -(1+b)/b", rel_residual(&idx, &lq, &flat, lq_const.abs()));
    let route = apply_b_of_q(grid, &flat, p)?;
    let route_scale = lq_const.abs() * (b - 1.0).abs() * sup_on(&idx, &qp);
    push("B(Q)(L(Q)) = 0", sup_on(&idx, &route.value) / route_scale);

    // spectral condition
    let q2_sq_integral = grid.dot(&(&q * &q), &sq);
    let inverse_sq_pairing = inverse_pairing(grid, p, &sq, &sa)?;
    let spectral_condition_negative = q2_sq_integral < 0.0 && inverse_sq_pairing < 0.0;
    let passed = checks.iter().all(|c| c.passed) && spectral_condition_negative;
    Ok(VerificationReport {
        b,
        amplitude: p.amplitude,
        grid: grid.spec(),
        identity_window: w,
        checks,
        q2_sq_integral,
        inverse_sq_pairing,
        spectral_condition_negative,
        passed,
    })
}

/// `∫ η SQ` where `L η = SQ`, solved as `H η̃ = SQ/√α` with the kernel removed.
fn inverse_pairing(grid: &Grid, p: &LeftonParams, sq: &[f64], sa: &[f64]) -> Result<f64> {
    let h = assemble_h(grid, p, Discretization::Fourier);
    let (vals, vecs) = sorted_eigen(&h.matrix);
    let r = DVector::from_iterator(grid.len(), sq.iter().zip(sa).map(|(s, a)| s / a));
    let gap = vals.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if !gap.is_finite() {
        return Err(Error::Eigen("empty spectrum".into()));
    }
    let cut = 1e-6 * h_prefactor(p);
    let mut eta = DVector::zeros(grid.len());
    for (c, &lam) in vals.iter().enumerate() {
        if lam.abs() > cut {
            let v = vecs.column(c);
            eta += v * (v.dot(&r) / lam);
        }
    }
    Ok(grid.dx() * eta.dot(&r))
}

/// Constrained Rayleigh minimum with and without the `SQ` constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoercivityReport {
    pub b: f64,
    pub window: f64,
    pub size: usize,
    pub dx: f64,
    /// Minimum under `(η, SQ) = (η, Q') = 0`.
    pub lambda1: f64,
    /// Minimum under `(η, Q') = 0` only.
    pub lambda1_without_sq: f64,
}

/// Default coercivity window: 12 in units of the profile width `1/ν` (at least 12).
pub fn default_coercivity_window(p: &LeftonParams) -> f64 {
    12.0 / p.nu().min(1.0)
}

/// Estimates `λ₁ = min (Lη,η)/‖η‖²_{H¹_α}` on `|x-x*| ≤ window` at the spacing of `grid`.
///
/// Both quadratic forms are built in the H-frame `f̃ = √α η`, where
/// `‖η‖²_{H¹_α} = ∫ f̃² + (f̃' + ((1+2b)/2) tanh(ν(x-x*)) f̃)²`.
pub fn coercivity_estimate(grid: &Grid, p: &LeftonParams, window: f64) -> Result<CoercivityReport> {
    let mut n = (2.0 * window / grid.dx()).round() as usize;
    n += n % 2;
    let sub = Grid::new(2.0 * window, n)?;
    let centred = p.centred_at(0.0);
    let h = assemble_h(&sub, &centred, Discretization::Fourier).matrix;
    let d1 = fourier_derivative_matrix(&sub, 1);
    let mut gm = d1;
    let c = (1.0 + 2.0 * p.b) / 2.0;
    for (i, x) in sub.points().enumerate() {
        gm[(i, i)] += c * centred.tanh_at(x);
    }
    let dx = sub.dx();
    let a = h * dx;
    let bm = (DMatrix::identity(n, n) + gm.transpose() * &gm) * dx;
    let sq_c: Vec<f64> = sub.points().map(|x| centred.sq_at(x) * (-0.5 * centred.log_alpha_at(x)).exp()).collect();
    let qp_c: Vec<f64> = sub
        .points()
        .map(|x| centred.big_q_prime_at(x) * (-0.5 * centred.log_alpha_at(x)).exp())
        .collect();
    let with = constrained_minimum(&a, &bm, &[&sq_c, &qp_c])?;
    let without = constrained_minimum(&a, &bm, &[&qp_c])?;
    Ok(CoercivityReport { b: p.b, window, size: n, dx, lambda1: with, lambda1_without_sq: without })
}

/// `min xᵀAx / xᵀBx` over `x ⊥ constraints`.
pub fn constrained_minimum(a: &DMatrix<f64>, b: &DMatrix<f64>, constraints: &[&[f64]]) -> Result<f64> {
    let n = a.nrows();
    let k = constraints.len();
    let cmat = DMatrix::from_fn(n, k, |r, c| constraints[c][r]);
    let qr = cmat.qr();
    let project = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let mut t = m.clone();
        qr.q_tr_mul(&mut t);
        let mut tt = t.transpose();
        qr.q_tr_mul(&mut tt);
        tt.view((k, k), (n - k, n - k)).into_owned()
    };
    let mut ar = project(a);
    symmetrize(&mut ar);
    let mut br = project(b);
    symmetrize(&mut br);
    let chol = br.cholesky().ok_or(Error::IndefiniteGram)?;
    let l = chol.l();
    let linv = l.clone().try_inverse().ok_or(Error::IndefiniteGram)?;
    let mut m = &linv * ar * linv.transpose();
    symmetrize(&mut m);
    let eig = SymmetricEigen::new(m);
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}
