//! Fixed-step RK4 integration of the nonlinear flow (momentum or velocity
//! form) and of the flow linearized about a lefton.
//!
//! For positive momentum with `b < 0` the momentum form is advanced in the
//! root variable `g = m^(-1/(2b))`, which obeys `g_t = -u g_x + u_x g / 2`.
//! Then `m = |g|^(-2b)` is positive by construction and keeps full relative
//! accuracy in the exponentially small tails.

use serde::{Deserialize, Serialize};

use crate::conservation::{root_exponent, InvariantSeries};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, GridSpec};
use crate::profiles::LeftonParams;

/// Relative tolerance of the positivity guard on the momentum density.
pub const POSITIVITY_TOLERANCE: f64 = 1e-12;

/// Relative tolerance on the root variable `g`: a sign flip of `g` only
/// matters once `|g|^(-2b)` is resolvable against `max m`, which happens at
/// `|g| ≈ ε_mach^(1/(-2b)) max g`.
pub fn root_positivity_tolerance(b: f64) -> f64 {
    f64::EPSILON.powf(-0.5 / b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Momentum,
    Velocity,
    Linearized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BumpShape {
    /// `sech(x - c)`
    Sech,
    /// `exp(-(x - c)²)`
    Gauss,
}

impl BumpShape {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            BumpShape::Sech => 1.0 / z.cosh(),
            BumpShape::Gauss => (-z * z).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    Lefton,
    LeftonPerturbed { delta: f64, centre: f64, shape: BumpShape },
    Peakon { c: f64, x0: f64 },
    Gaussian { amplitude: f64, width: f64 },
    /// Samples of the evolved variable itself.
    Samples { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub b: f64,
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub x_star: f64,
    pub grid: GridSpec,
    pub dt: f64,
    pub t_final: f64,
    /// Steps between snapshots.
    pub stride: usize,
    /// When set, `dt·max|u|/Δx` is checked against this factor every step.
    pub cfl: Option<f64>,
    pub dealias: bool,
    pub positivity_guard: bool,
    pub initial: InitialCondition,
    pub form: Form,
    /// Sup-norm ceiling treated as blow-up.
    pub blowup_ceiling: f64,
}

impl SimConfig {
    /// Defaults: Λ = 80, N = 4096, dt = 1e-3, lefton data, momentum form.
    pub fn lefton(b: f64, amplitude: f64) -> Self {
        SimConfig {
            b,
            amplitude,
            x_star: 0.0,
            grid: GridSpec { length: 80.0, count: 4096 },
            dt: 1e-3,
            t_final: 10.0,
            stride: 100,
            cfl: None,
            dealias: true,
            positivity_guard: true,
            initial: InitialCondition::Lefton,
            form: Form::Momentum,
            blowup_ceiling: 1e8,
        }
    }

    /// Gaussian velocity data for regime scans (guard off).
    pub fn gaussian(b: f64, amplitude: f64, width: f64) -> Self {
        SimConfig {
            initial: InitialCondition::Gaussian { amplitude, width },
            form: Form::Velocity,
            positivity_guard: false,
            ..SimConfig::lefton(b, 1.0)
        }
    }

    pub fn lefton_params(&self) -> Result<LeftonParams> {
        LeftonParams::new(self.b, self.amplitude, self.x_star)
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidParameter(s));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("T must be positive, got {}", self.t_final));
        }
        if self.stride == 0 {
            return bad("snapshot stride must be at least 1".into());
        }
        if ((self.t_final / self.dt) - self.steps() as f64).abs() > 1e-6 {
            return bad(format!("T = {} is not a whole number of steps of {}", self.t_final, self.dt));
        }
        if !self.b.is_finite() {
            return bad("b must be finite".into());
        }
        if self.form == Form::Linearized {
            self.lefton_params()?;
        }
        Grid::from_spec(self.grid).map(|_| ())
    }

    /// Initial samples of the evolved variable.
    pub fn initial_field(&self, grid: &Grid) -> Result<Field> {
        let lefton = || self.lefton_params();
        let momentum = match &self.initial {
            InitialCondition::Samples { values } => {
                if values.len() != grid.len() {
                    return Err(Error::LengthMismatch { expected: grid.len(), got: values.len() });
                }
                return Ok(Field::new(values.clone()));
            }
            InitialCondition::Lefton => {
                let p = lefton()?;
                match self.form {
                    Form::Velocity => return Ok(grid.sample(|x| p.q_at(x))),
                    Form::Linearized => return Ok(Field::zeros(grid.len())),
                    Form::Momentum => grid.sample(|x| p.big_q_at(x)),
                }
            }
            InitialCondition::LeftonPerturbed { delta, centre, shape } => {
                let bump = grid.sample(|x| delta * shape.eval(x - centre));
                if self.form == Form::Linearized {
                    return Ok(bump);
                }
                let p = lefton()?;
                grid.sample(|x| p.big_q_at(x)).axpy(1.0, &bump)
            }
            InitialCondition::Gaussian { amplitude, width } => {
                let u = grid.sample(|x| amplitude * (-(x / width).powi(2)).exp());
                match self.form {
                    Form::Momentum => grid.helmholtz(&u),
                    _ => return Ok(u),
                }
            }
            InitialCondition::Peakon { c, x0 } => {
                if self.form == Form::Momentum {
                    return Err(Error::InvalidParameter(
                        "peakon momentum is a point mass; use the velocity form".into(),
                    ));
                }
                return Ok(grid.sample(|x| c * (-(x - x0).abs()).exp()));
            }
        };
        match self.form {
            Form::Velocity => Ok(grid.helm(&momentum)),
            _ => Ok(momentum),
        }
    }
}

/// Snapshots of a run plus the conserved-quantity record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Samples of the evolved variable (m, u or v according to `config.form`).
    pub states: Vec<Field>,
    pub invariants: InvariantSeries,
    /// Minimum of the momentum density at each snapshot.
    pub positivity_minima: Vec<f64>,
    pub config: SimConfig,
    pub warnings: Vec<String>,
}

impl Trajectory {
    /// Momentum density at snapshot `i`.
    pub fn momentum(&self, grid: &Grid, i: usize) -> Field {
        match self.config.form {
            Form::Velocity => grid.helmholtz(&self.states[i]),
            _ => self.states[i].clone(),
        }
    }

    pub fn last(&self) -> &Field {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

fn dealiased(grid: &Grid, on: bool, f: Field) -> Field {
    if on {
        grid.dealias(&f)
    } else {
        f
    }
}

/// `-(u m_x + b u_x m)` with `u = (1-∂²)⁻¹ m`, products dealiased.
pub fn rhs_momentum(grid: &Grid, m: &[f64], b: f64) -> Result<Field> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "momentum" });
    }
    let out = momentum_rhs(grid, m, b, true);
    out.check_finite("momentum right-hand side")?;
    Ok(out)
}

fn momentum_rhs(grid: &Grid, m: &[f64], b: f64, dealias: bool) -> Field {
    let (u, ux) = velocity_pair(grid, m);
    let mx = grid.diff(m, 1);
    let prod: Field = (0..m.len()).map(|i| -(u[i] * mx[i] + b * ux[i] * m[i])).collect();
    dealiased(grid, dealias, prod)
}

/// `u = (1-∂²)⁻¹m` and `u_x` from one forward transform.
fn velocity_pair(grid: &Grid, m: &[f64]) -> (Field, Field) {
    let spec = grid.forward(m);
    let uhat: Vec<_> = spec
        .iter()
        .zip(grid.wavenumbers())
        .map(|(c, &k)| c / (1.0 + k * k))
        .collect();
    let nyq = grid.len() / 2;
    let uxhat: Vec<_> = uhat
        .iter()
        .zip(grid.wavenumbers())
        .enumerate()
        .map(|(j, (c, &k))| {
            if j == nyq {
                num_complex::Complex64::new(0.0, 0.0)
            } else {
                c * num_complex::Complex64::new(0.0, k)
            }
        })
        .collect();
    (grid.inverse(uhat), grid.inverse(uxhat))
}

/// Right-hand side in the root variable `g`.
fn root_rhs(grid: &Grid, g: &[f64], b: f64, dealias: bool) -> Field {
    let e = -2.0 * b;
    let m: Field = g.iter().map(|v| v.abs().powf(e)).collect();
    let (u, ux) = velocity_pair(grid, &m);
    let gx = grid.diff(g, 1);
    let prod: Field = (0..g.len()).map(|i| -u[i] * gx[i] + 0.5 * ux[i] * g[i]).collect();
    dealiased(grid, dealias, prod)
}

/// `-u u_x - ∂x (1-∂²)⁻¹ ((b/2) u² + ((3-b)/2) u_x²)`.
pub fn rhs_velocity(grid: &Grid, u: &[f64], b: f64) -> Result<Field> {
    if !u.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "velocity" });
    }
    let out = velocity_rhs(grid, u, b, true);
    out.check_finite("velocity right-hand side")?;
    Ok(out)
}

fn velocity_rhs(grid: &Grid, u: &[f64], b: f64, dealias: bool) -> Field {
    let ux = grid.diff(u, 1);
    let adv = dealiased(grid, dealias, (0..u.len()).map(|i| u[i] * ux[i]).collect());
    let flux = dealiased(
        grid,
        dealias,
        (0..u.len()).map(|i| 0.5 * b * u[i] * u[i] + 0.5 * (3.0 - b) * ux[i] * ux[i]).collect(),
    );
    let nyq = grid.len() / 2;
    let nonlocal = grid.apply_symbol(&flux, |j, k| {
        if j == nyq {
            num_complex::Complex64::new(0.0, 0.0)
        } else {
            num_complex::Complex64::new(0.0, k / (1.0 + k * k))
        }
    });
    (0..u.len()).map(|i| -adv[i] - nonlocal[i]).collect()
}

/// Profile samples reused by every linearized right-hand side evaluation.
#[derive(Debug, Clone)]
pub struct LinearizedCoefficients {
    q: Field,
    q_prime: Field,
    big_q: Field,
    big_q_prime: Field,
    b: f64,
}

impl LinearizedCoefficients {
    pub fn new(grid: &Grid, p: &LeftonParams) -> Self {
        LinearizedCoefficients {
            q: grid.sample(|x| p.q_at(x)),
            q_prime: grid.sample(|x| p.q_prime_at(x)),
            big_q: grid.sample(|x| p.big_q_at(x)),
            big_q_prime: grid.sample(|x| p.big_q_prime_at(x)),
            b: p.b,
        }
    }

    /// `-b q' v - q v_x - b Q h_x - Q' h`, `h = (1-∂²)⁻¹ v`.
    pub fn apply(&self, grid: &Grid, v: &[f64]) -> Field {
        let vx = grid.diff(v, 1);
        let (h, hx) = velocity_pair(grid, v);
        let b = self.b;
        (0..v.len())
            .map(|i| {
                -b * self.q_prime[i] * v[i] - self.q[i] * vx[i] - b * self.big_q[i] * hx[i]
                    - self.big_q_prime[i] * h[i]
            })
            .collect()
    }
}

/// `(1/(1-b)) B(Q) L v` through the closed form.
pub fn rhs_linearized(grid: &Grid, v: &[f64], p: &LeftonParams) -> Result<Field> {
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite { context: "linearized state" });
    }
    Ok(LinearizedCoefficients::new(grid, p).apply(grid, v))
}

enum Variable {
    Root { b: f64 },
    Density { b: f64 },
    Velocity { b: f64 },
    Linear(Box<LinearizedCoefficients>),
}

impl Variable {
    fn rhs(&self, grid: &Grid, y: &[f64], dealias: bool) -> Field {
        match self {
            Variable::Root { b } => root_rhs(grid, y, *b, dealias),
            Variable::Density { b } => momentum_rhs(grid, y, *b, dealias),
            Variable::Velocity { b } => velocity_rhs(grid, y, *b, dealias),
            Variable::Linear(c) => c.apply(grid, y),
        }
    }

    fn to_state(&self, y: &[f64]) -> Field {
        match self {
            Variable::Root { b } => y.iter().map(|v| v.abs().powf(-2.0 * b)).collect(),
            _ => Field::new(y.to_vec()),
        }
    }

    /// Momentum density implied by the evolved variable, if meaningful.
    fn momentum(&self, grid: &Grid, y: &[f64]) -> Option<Field> {
        match self {
            Variable::Root { .. } | Variable::Density { .. } => Some(self.to_state(y)),
            Variable::Velocity { .. } => Some(grid.helmholtz(y)),
            Variable::Linear(_) => None,
        }
    }

    /// `(min, tolerance·max)` of the quantity checked by the guard.
    fn guard_min(&self, grid: &Grid, y: &[f64]) -> Option<(f64, f64)> {
        let (f, tol) = match self {
            Variable::Root { b } => (Field::new(y.to_vec()), root_positivity_tolerance(*b)),
            Variable::Linear(_) => return None,
            _ => (self.momentum(grid, y)?, POSITIVITY_TOLERANCE),
        };
        Some((f.min_with_index().0, tol * f.max_abs()))
    }
}

fn rk4_step(grid: &Grid, var: &Variable, y: &[f64], dt: f64, dealias: bool) -> Field {
    let n = y.len();
    let k1 = var.rhs(grid, y, dealias);
    let y2: Field = (0..n).map(|i| y[i] + 0.5 * dt * k1[i]).collect();
    let k2 = var.rhs(grid, &y2, dealias);
    let y3: Field = (0..n).map(|i| y[i] + 0.5 * dt * k2[i]).collect();
    let k3 = var.rhs(grid, &y3, dealias);
    let y4: Field = (0..n).map(|i| y[i] + dt * k3[i]).collect();
    let k4 = var.rhs(grid, &y4, dealias);
    (0..n)
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Runs the configured flow from `initial` (samples of the evolved variable).
pub fn evolve(config: &SimConfig, initial: &Field) -> Result<Trajectory> {
    config.validate()?;
    let grid = Grid::from_spec(config.grid)?;
    if initial.len() != grid.len() {
        return Err(Error::LengthMismatch { expected: grid.len(), got: initial.len() });
    }
    initial.check_finite("initial state")?;
    let b = config.b;
    let (var, mut y) = match config.form {
        Form::Momentum if b < 0.0 && initial.iter().all(|&v| v > 0.0) => {
            let s = root_exponent(b);
            (Variable::Root { b }, initial.map(|v| v.powf(s)))
        }
        Form::Momentum => (Variable::Density { b }, initial.clone()),
        Form::Velocity => (Variable::Velocity { b }, initial.clone()),
        Form::Linearized => {
            let p = config.lefton_params()?;
            (Variable::Linear(Box::new(LinearizedCoefficients::new(&grid, &p))), initial.clone())
        }
    };

    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        invariants: InvariantSeries::default(),
        positivity_minima: Vec::new(),
        config: config.clone(),
        warnings: Vec::new(),
    };
    let record = |traj: &mut Trajectory, t: f64, y: &[f64]| {
        let state = var.to_state(y);
        if let Some(m) = var.momentum(&grid, y) {
            traj.invariants.record(&grid, t, &m, b);
            traj.positivity_minima.push(m.min_with_index().0);
        }
        traj.times.push(t);
        traj.states.push(state);
    };
    record(&mut traj, 0.0, &y);
    if let Some(w) = grid.periodicity_warning(initial, "initial state") {
        traj.warnings.push(w);
    }

    let steps = config.steps();
    for step in 1..=steps {
        let t = step as f64 * config.dt;
        if let Some(cfl) = config.cfl {
            if let Some(m) = var.momentum(&grid, &y) {
                let umax = match var {
                    Variable::Velocity { .. } => y.iter().fold(0.0f64, |a, v| a.max(v.abs())),
                    _ => grid.helm(&m).max_abs(),
                };
                let limit = cfl * grid.dx() / umax.max(f64::MIN_POSITIVE);
                if config.dt > limit {
                    return Err(Error::InvalidParameter(format!(
                        "CFL violated at t = {t}: dt = {} exceeds {limit:.3e}",
                        config.dt
                    )));
                }
            }
        }
        y = rk4_step(&grid, &var, &y, config.dt, config.dealias);
        let norm = y.max_abs();
        if !norm.is_finite() || norm > config.blowup_ceiling {
            return Err(Error::BlowUp { time: t, norm });
        }
        if config.positivity_guard {
            if let Some((min, floor)) = var.guard_min(&grid, &y) {
                if min < -floor {
                    return Err(Error::PositivityBreach { time: t, min });
                }
            }
        }
        if step % config.stride == 0 || step == steps {
            record(&mut traj, t, &y);
        }
    }
    if let Some(w) = grid.periodicity_warning(traj.last(), "final state") {
        traj.warnings.push(w);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{lefton_big_q, lefton_q};

    fn setup() -> (Grid, LeftonParams) {
        (Grid::new(80.0, 4096).unwrap(), LeftonParams::new(-3.0, 1.0, 0.0).unwrap())
    }

    #[test]
    fn lefton_is_a_fixed_point_of_both_forms() {
        let (g, p) = setup();
        let r = rhs_momentum(&g, &lefton_big_q(&g, &p), -3.0).unwrap();
        assert!(r.max_abs() < 1e-9, "momentum residual {:e}", r.max_abs());
        let shifted = lefton_big_q(&g, &p.centred_at(1.7));
        assert!(rhs_momentum(&g, &shifted, -3.0).unwrap().max_abs() < 1e-9);
        let v = rhs_velocity(&g, &lefton_q(&g, &p), -3.0).unwrap();
        assert!(v.max_abs() < 1e-9, "velocity residual {:e}", v.max_abs());
    }

    #[test]
    fn constants_are_fixed_points() {
        let g = Grid::new(20.0, 64).unwrap();
        let c = Field::constant(64, 1.3);
        assert!(rhs_momentum(&g, &c, 2.0).unwrap().max_abs() < 1e-13);
        assert!(rhs_velocity(&g, &c, 2.0).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn velocity_rhs_maps_to_momentum_rhs() {
        let g = Grid::new(40.0, 512).unwrap();
        let u = g.sample(|x| 0.8 * (-x * x / 6.0).exp() + 0.1);
        let m = g.helmholtz(&u);
        let lhs = g.helmholtz(&velocity_rhs(&g, &u, 2.5, false));
        let rhs = momentum_rhs(&g, &m, 2.5, false);
        assert!((&lhs - &rhs).max_abs() < 1e-9 * rhs.max_abs());
    }

    #[test]
    fn root_and_density_rhs_agree() {
        let (g, p) = setup();
        let m = g.sample(|x| p.big_q_at(x) + 0.05 * (-(x - 1.0) * (x - 1.0)).exp());
        let s = root_exponent(-3.0);
        let gr = m.map(|v| v.powf(s));
        let dg = root_rhs(&g, &gr, -3.0, false);
        let dm_root: Field = (0..m.len()).map(|i| m[i] / (s * gr[i]) * dg[i]).collect();
        let dm = momentum_rhs(&g, &m, -3.0, false);
        let core: Vec<usize> = (0..g.len()).filter(|&i| g.x(i).abs() < 8.0).collect();
        let err = core.iter().map(|&i| (dm_root[i] - dm[i]).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9 * dm.max_abs(), "mismatch {err:e}");
    }

    #[test]
    fn peakon_moves_right() {
        let g = Grid::new(40.0, 2048).unwrap();
        let mut cfg = SimConfig::gaussian(2.0, 1.0, 1.0);
        cfg.grid = g.spec();
        cfg.initial = InitialCondition::Peakon { c: 1.0, x0: 0.0 };
        cfg.dt = 1e-3;
        cfg.t_final = 0.5;
        cfg.stride = 500;
        let u0 = cfg.initial_field(&g).unwrap();
        let traj = evolve(&cfg, &u0).unwrap();
        let peak = g.x(traj.last().argmax());
        assert!((peak - 0.5).abs() < 0.05, "peak at {peak}");
    }

    #[test]
    fn linearized_rhs_annihilates_translation_and_scaling_modes() {
        let (g, p) = setup();
        let qp = g.sample(|x| p.big_q_prime_at(x));
        let q = lefton_big_q(&g, &p);
        for v in [qp, q] {
            let r = rhs_linearized(&g, &v, &p).unwrap();
            assert!(r.max_abs() < 1e-9, "residual {:e}", r.max_abs());
        }
    }

    #[test]
    fn config_validation() {
        let mut c = SimConfig::lefton(-3.0, 1.0);
        assert!(c.validate().is_ok());
        c.dt = 0.0;
        assert!(c.validate().is_err());
        let mut c = SimConfig::lefton(-3.0, 1.0);
        c.t_final = 1.00005;
        assert!(c.validate().is_err());
        let mut c = SimConfig::lefton(-3.0, 1.0);
        c.form = Form::Linearized;
        c.b = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn guard_reports_negative_density() {
        let g = Grid::new(40.0, 256).unwrap();
        let mut cfg = SimConfig::lefton(2.0, 1.0);
        cfg.grid = g.spec();
        cfg.t_final = 0.01;
        cfg.dt = 1e-3;
        cfg.stride = 1;
        let m0 = g.sample(|x| (-x * x).exp() - 0.2 * (-(x - 3.0) * (x - 3.0)).exp());
        assert!(matches!(evolve(&cfg, &m0), Err(Error::PositivityBreach { .. })));
    }
}
