//! Modulation of a near-lefton state: `m(· + ρ) = (1 + a) Q + ε` with `ε`
//! orthogonal, in the α-weighted product, to `Q'` and to `δF₂/δm (Q)`.
//!
//! The two conditions are solved in the lab frame against closed-form shifted
//! profiles, so the residual is a smooth function of `(ρ, a)` and Newton sees an
//! exact Jacobian. The weighted sums run over a window whose sample set is
//! fixed per call (per series, in [`modulation_series`]), which keeps the
//! conditions continuous in `ρ`.

use serde::{Deserialize, Serialize};

use crate::conservation::{h1_norm, norms, variation_f2, window_indices, Norms};
use crate::error::{Error, Result};
use crate::evolution::Trajectory;
use crate::grid::{Field, Grid};
use crate::profiles::LeftonParams;

/// Default α-growth bound for the weighted window.
pub const MODULATION_ALPHA_RATIO: f64 = 1e10;
pub const NEWTON_DAMPING: f64 = 0.5;
pub const NEWTON_MAX_ITER: usize = 50;
pub const NEWTON_TOLERANCE: f64 = 1e-12;
/// Largest `|a|` accepted for the solved frame (`γ` stays in `(0, 2)`).
pub const MAX_AMPLITUDE_OFFSET: f64 = 1.0;
/// Largest unweighted `min_γ ‖m - γQ(· - ρ₀)‖_{H¹} / ‖Q‖_{H¹}` accepted as input.
pub const MAX_RELATIVE_DEFECT: f64 = 0.3;
/// Extra Newton steps taken after the tolerance is met, while they still help.
const POLISH_STEPS: usize = 2;
/// Tolerated relative departure of `δF₂/δm (Q)` from `1/k` on the core.
const CRITICAL_POINT_TOLERANCE: f64 = 1e-6;

/// One decomposed snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationFrame {
    pub t: f64,
    pub rho: f64,
    pub a: f64,
    /// `ε` sampled in the co-moving frame.
    #[serde(skip)]
    pub eps: Field,
    pub norms: Norms,
    /// Unweighted `‖ε‖_{H¹}` over the whole domain.
    pub eps_h1: f64,
    /// `(ε, Q')_α` and `(ε, F₂'(Q))_α` at the returned frame.
    pub orthogonality: [f64; 2],
    pub iterations: usize,
}

impl ModulationFrame {
    pub fn gamma(&self) -> f64 {
        1.0 + self.a
    }
}

/// Reusable decomposition setup for one lefton and grid.
#[derive(Debug, Clone)]
pub struct Modulator {
    grid: Grid,
    p: LeftonParams,
    window: f64,
    /// Measured constant value of `δF₂/δm` at `Q`.
    variation_constant: f64,
    q_h1: f64,
}

struct Weights {
    idx: Vec<usize>,
    m: Vec<f64>,
}

impl Modulator {
    /// Sets up the decomposition on the default window (α growth ≤ 1e10).
    pub fn new(grid: &Grid, p: &LeftonParams) -> Result<Self> {
        Self::with_window(grid, p, p.alpha_window(MODULATION_ALPHA_RATIO))
    }

    pub fn with_window(grid: &Grid, p: &LeftonParams, window: f64) -> Result<Self> {
        p.check_window(window)?;
        if window >= 0.5 * grid.length() {
            return Err(Error::WindowOverflow { window, limit: 0.5 * grid.length() });
        }
        let q = grid.sample(|x| p.big_q_at(x));
        let var = variation_f2(grid, &q, p.b)?;
        let core = window_indices(grid, p.x_star, 3.0_f64.min(window));
        let c = core.iter().map(|&i| var[i]).sum::<f64>() / core.len() as f64;
        let target = 1.0 / p.k();
        if ((c - target) / target).abs() > CRITICAL_POINT_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "variation of F2 at the lefton is {c}, expected the constant {target}"
            )));
        }
        Ok(Modulator { grid: grid.clone(), p: *p, window, variation_constant: c, q_h1: h1_norm(grid, &q) })
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn variation_constant(&self) -> f64 {
        self.variation_constant
    }

    /// Initial guess: cross-correlation peak for `ρ`, peak ratio for `a`.
    pub fn initial_guess(&self, m: &[f64]) -> (f64, f64) {
        let g = &self.grid;
        let q = g.sample(|x| self.p.big_q_at(x));
        let fm = g.forward(m);
        let fq = g.forward(&q);
        let corr = g.inverse(fm.iter().zip(&fq).map(|(a, b)| a * b.conj()).collect());
        let n = g.len();
        let j = corr.argmax();
        let lag = if j > n / 2 { j as f64 - n as f64 } else { j as f64 };
        let rho = lag * g.dx();
        let peak = m[g.nearest_index(self.p.x_star + rho)];
        (rho, peak / self.p.peak_momentum() - 1.0)
    }

    /// Decomposes with the weighted window anchored at the initial guess.
    pub fn decompose(&self, m: &[f64], t: f64) -> Result<ModulationFrame> {
        let (rho0, a0) = self.initial_guess(m);
        self.solve(m, t, rho0, a0, rho0)
    }

    /// Decomposes with the weighted window centred at `x* + anchor`.
    pub fn decompose_anchored(&self, m: &[f64], t: f64, anchor: f64) -> Result<ModulationFrame> {
        let (rho0, a0) = self.initial_guess(m);
        self.solve(m, t, rho0, a0, anchor)
    }

    fn check_input(&self, m: &[f64]) -> Result<()> {
        if m.len() != self.grid.len() {
            return Err(Error::LengthMismatch { expected: self.grid.len(), got: m.len() });
        }
        match m.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            None => Ok(()),
            Some((index, &min)) if min.is_finite() => Err(Error::NonPositive { min, index }),
            Some(_) => Err(Error::NonFinite { context: "decomposition input" }),
        }
    }

    /// `G(ρ, a)` and its Jacobian `[[∂ρG₁, ∂aG₁], [∂ρG₂, ∂aG₂]]`.
    fn system(&self, w: &Weights, rho: f64, a: f64) -> ([f64; 2], [[f64; 2]; 2], f64) {
        let p = &self.p;
        let b = p.b;
        let pw = -1.0 / b - 2.0;
        let cf = self.variation_constant;
        let dx = self.grid.dx();
        let mut g = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        let mut scale = 0.0;
        for (k, &i) in w.idx.iter().enumerate() {
            let z = self.grid.x(i) - rho;
            let t = p.tanh_at(z);
            let lq = p.log_big_q_at(z);
            let q = lq.exp();
            let alpha = (pw * lq).exp();
            let qa = q * alpha;
            let w1 = b * t * qa;
            let w2 = cf * alpha;
            let w1p = b * qa * (p.nu() * (1.0 - t * t) + (pw + 1.0) * b * t * t);
            let w2p = cf * pw * b * t * alpha;
            let qp = b * t * q;
            let eps = w.m[k] - (1.0 + a) * q;
            g[0] += eps * w1;
            g[1] += eps * w2;
            jac[0][0] += (1.0 + a) * qp * w1 - eps * w1p;
            jac[1][0] += (1.0 + a) * qp * w2 - eps * w2p;
            jac[0][1] -= q * w1;
            jac[1][1] -= q * w2;
            scale += w.m[k].abs() * (w1.abs() + w2.abs());
        }
        for v in g.iter_mut().chain(jac.iter_mut().flatten()) {
            *v *= dx;
        }
        (g, jac, scale * dx)
    }

    /// Unweighted relative distance from `m` to the closest multiple of `Q(· - ρ)`.
    pub fn unweighted_distance(&self, m: &[f64], rho: f64) -> f64 {
        let g = &self.grid;
        let q = g.sample(|x| self.p.big_q_at(x - rho));
        let h1 = |a: &[f64], b: &[f64]| {
            let (ax, bx) = (g.diff(a, 1), g.diff(b, 1));
            g.dot(a, b) + g.dot(&ax, &bx)
        };
        let gamma = h1(m, &q) / h1(&q, &q);
        let d = Field::new(m.to_vec()).axpy(-gamma, &q);
        h1(&d, &d).sqrt() / self.q_h1
    }

    fn solve(&self, m: &[f64], t: f64, rho0: f64, a0: f64, anchor: f64) -> Result<ModulationFrame> {
        self.check_input(m)?;
        let distance = self.unweighted_distance(m, rho0);
        if distance > MAX_RELATIVE_DEFECT {
            return Err(Error::OutOfNeighbourhood(format!(
                "relative distance {distance:.3e} to the lefton family exceeds {MAX_RELATIVE_DEFECT}"
            )));
        }
        let idx = window_indices(&self.grid, self.p.x_star + anchor, self.window);
        let w = Weights { m: idx.iter().map(|&i| m[i]).collect(), idx };
        let (mut rho, mut a) = (rho0, a0);
        let (mut g, mut jac, scale) = self.system(&w, rho, a);
        let tol = NEWTON_TOLERANCE * scale;
        let norm = |g: &[f64; 2]| g[0].abs().max(g[1].abs());
        let mut iterations = 0;
        let mut polish = 0;
        while norm(&g) >= tol || polish < POLISH_STEPS {
            if norm(&g) < tol {
                polish += 1;
            }
            if iterations == NEWTON_MAX_ITER {
                if norm(&g) < tol {
                    break;
                }
                return Err(Error::NoConvergence { iterations, residual: norm(&g) / scale });
            }
            iterations += 1;
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if det == 0.0 || !det.is_finite() {
                return Err(Error::NoConvergence { iterations, residual: norm(&g) / scale });
            }
            let d_rho = (jac[1][1] * g[0] - jac[0][1] * g[1]) / det;
            let d_a = (jac[0][0] * g[1] - jac[1][0] * g[0]) / det;
            let mut step = 1.0;
            let mut accepted = false;
            while step >= 1e-3 {
                let (r, s) = (rho - step * d_rho, a - step * d_a);
                let trial = self.system(&w, r, s);
                if norm(&trial.0) < norm(&g) {
                    (rho, a) = (r, s);
                    (g, jac, _) = trial;
                    accepted = true;
                    break;
                }
                step *= NEWTON_DAMPING;
            }
            if !accepted {
                if norm(&g) < tol {
                    break;
                }
                return Err(Error::NoConvergence { iterations, residual: norm(&g) / scale });
            }
            if !(rho.is_finite() && a.is_finite()) {
                return Err(Error::NoConvergence { iterations, residual: f64::NAN });
            }
        }
        if a.abs() > MAX_AMPLITUDE_OFFSET || (rho - anchor).abs() > 0.5 * self.window {
            return Err(Error::OutOfNeighbourhood(format!("solution rho = {rho:.4}, a = {a:.4}")));
        }
        let eps = self.residual_field(m, rho, a);
        let eps_h1 = h1_norm(&self.grid, &eps);
        let norms = norms(&self.grid, &eps, &self.p, self.window)?;
        Ok(ModulationFrame { t, rho, a, eps, norms, eps_h1, orthogonality: g, iterations })
    }

    /// `ε = m(· + ρ) - (1 + a) Q`.
    pub fn residual_field(&self, m: &[f64], rho: f64, a: f64) -> Field {
        let shifted = self.grid.shift(m, rho);
        let q = self.grid.sample(|x| self.p.big_q_at(x));
        shifted.axpy(-(1.0 + a), &q)
    }
}

/// One-shot decomposition on the default window.
pub fn decompose(grid: &Grid, m: &[f64], p: &LeftonParams) -> Result<ModulationFrame> {
    Modulator::new(grid, p)?.decompose(m, 0.0)
}

/// Frames of a trajectory with the shift velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationSeries {
    pub frames: Vec<ModulationFrame>,
    /// `ρ'` by finite differences on the snapshot times.
    pub rho_rate: Vec<f64>,
    /// `max |ρ'| / ‖ε‖_{H¹}` over frames with a non-negligible defect.
    pub k1_hat: Option<f64>,
    pub window: f64,
}

/// Second-order differences, one-sided at the ends.
pub fn rate_of(times: &[f64], values: &[f64]) -> Vec<f64> {
    let n = times.len();
    if n < 2 {
        return vec![0.0; n];
    }
    if n == 2 {
        let r = (values[1] - values[0]) / (times[1] - times[0]);
        return vec![r, r];
    }
    (0..n)
        .map(|i| {
            let (i0, i1, i2) = match i {
                0 => (0, 1, 2),
                i if i == n - 1 => (n - 3, n - 2, n - 1),
                i => (i - 1, i, i + 1),
            };
            // derivative at times[i] of the quadratic through three points
            let (t0, t1, t2) = (times[i0], times[i1], times[i2]);
            let t = times[i];
            let l0 = (2.0 * t - t1 - t2) / ((t0 - t1) * (t0 - t2));
            let l1 = (2.0 * t - t0 - t2) / ((t1 - t0) * (t1 - t2));
            let l2 = (2.0 * t - t0 - t1) / ((t2 - t0) * (t2 - t1));
            l0 * values[i0] + l1 * values[i1] + l2 * values[i2]
        })
        .collect()
}

/// Defect norms below this are treated as an exact lefton in `k1_hat`.
const DEFECT_FLOOR: f64 = 1e-10;

/// Decomposes every snapshot of a momentum-form trajectory.
pub fn modulation_series(traj: &Trajectory, p: &LeftonParams) -> Result<ModulationSeries> {
    modulation_series_in(traj, p, None)
}

/// [`modulation_series`] with an explicit window half-width.
pub fn modulation_series_in(traj: &Trajectory, p: &LeftonParams, window: Option<f64>) -> Result<ModulationSeries> {
    let grid = Grid::from_spec(traj.config.grid)?;
    let modulator = match window {
        Some(w) => Modulator::with_window(&grid, p, w)?,
        None => Modulator::new(&grid, p)?,
    };
    let first = traj.momentum(&grid, 0);
    let anchor = modulator.initial_guess(&first).0;
    let n = traj.states.len();
    let threads = std::thread::available_parallelism().map_or(1, |c| c.get()).min(n.max(1));
    let chunk = n.div_ceil(threads.max(1)).max(1);
    let indices: Vec<usize> = (0..n).collect();
    let results: Vec<Result<ModulationFrame>> = std::thread::scope(|s| {
        let handles: Vec<_> = indices
            .chunks(chunk)
            .map(|ids| {
                let (modulator, grid) = (&modulator, &grid);
                s.spawn(move || {
                    ids.iter()
                        .map(|&i| modulator.decompose_anchored(&traj.momentum(grid, i), traj.times[i], anchor))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("decomposition worker panicked")).collect()
    });
    let frames = results.into_iter().collect::<Result<Vec<_>>>()?;
    let rhos: Vec<f64> = frames.iter().map(|f| f.rho).collect();
    let rho_rate = rate_of(&traj.times, &rhos);
    let k1_hat = frames
        .iter()
        .zip(&rho_rate)
        .filter(|(f, _)| f.eps_h1 > DEFECT_FLOOR)
        .map(|(f, r)| r.abs() / f.eps_h1)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    Ok(ModulationSeries { frames, rho_rate, k1_hat, window: modulator.window })
}
