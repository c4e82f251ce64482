use anyhow::{anyhow, Result};
use bfamily_core::conservation::InvariantSeries;
use bfamily_core::diagnostics::{
    default_regime_configs, default_stability_config, experiment_regimes, experiment_stability, ExperimentReport,
};
use bfamily_core::evolution::{evolve, Form, SimConfig, Trajectory};
use bfamily_core::linops::{
    assemble_h, coercivity_estimate, composition_residual, default_coercivity_window, project_out_translation,
    spectrum_h, verify_operator_identities, CompositionResidual, Discretization,
};
use bfamily_core::modulation::{modulation_series_in, ModulationSeries};
use bfamily_core::{Grid, GridSpec, LeftonParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Settings;
use crate::output::{read_dump, Column, Outputs, Scheme};
use crate::UsageError;

/// What a subcommand produced, before the manifest is written.
pub struct Outcome {
    pub passed: bool,
    pub grid: Option<GridSpec>,
    pub schemes: Vec<Scheme>,
}

fn params(s: &Settings) -> Result<LeftonParams> {
    LeftonParams::new(s.b.unwrap_or(-3.0), s.amplitude.unwrap_or(1.0), s.x_star.unwrap_or(0.0))
        .map_err(|e| UsageError(e.to_string()).into())
}

fn grid_of(s: &Settings, length: f64, n: usize) -> Result<Grid> {
    Grid::new(s.length.unwrap_or(length), s.n.unwrap_or(n)).map_err(|e| UsageError(e.to_string()).into())
}

fn write_invariants(out: &mut Outputs, name: &str, inv: &InvariantSeries) -> Result<()> {
    out.csv(
        name,
        &[
            ("t", Column::F(&inv.times)),
            ("E", Column::F(&inv.e)),
            ("F1", Column::F(&inv.f1)),
            ("F1_flag", Column::B(&inv.f1_flag)),
            ("F2", Column::F(&inv.f2)),
            ("drift_E", Column::F(&inv.drift_e)),
            ("drift_F2", Column::F(&inv.drift_f2)),
        ],
    )
}

fn write_modulation(out: &mut Outputs, series: &ModulationSeries) -> Result<()> {
    let col = |f: fn(&bfamily_core::modulation::ModulationFrame) -> f64| -> Vec<f64> {
        series.frames.iter().map(f).collect()
    };
    let (t, rho, a) = (col(|f| f.t), col(|f| f.rho), col(|f| f.a));
    let (h1, kz) = (col(|f| f.norms.h1_alpha), col(|f| f.norms.k_z));
    out.csv(
        "modulation.csv",
        &[
            ("t", Column::F(&t)),
            ("rho", Column::F(&rho)),
            ("a", Column::F(&a)),
            ("eps_h1alpha", Column::F(&h1)),
            ("eps_kz", Column::F(&kz)),
            ("rho_rate", Column::F(&series.rho_rate)),
        ],
    )?;
    out.svg("modulation.svg", "modulation parameters", &t, &[("rho", &rho), ("a", &a)])
}

#[derive(Serialize)]
struct EvolveReport<'a> {
    config: &'a SimConfig,
    snapshots: usize,
    final_time: f64,
    max_drift_e: f64,
    max_drift_f2: f64,
    min_positivity: f64,
    warnings: &'a [String],
}

pub fn evolve_cmd(s: &Settings, out: &mut Outputs) -> Result<Outcome> {
    let mut c = SimConfig::lefton(s.b.unwrap_or(-3.0), s.amplitude.unwrap_or(1.0));
    s.apply(&mut c)?;
    let grid = Grid::from_spec(c.grid).map_err(|e| UsageError(e.to_string()))?;
    let initial = c.initial_field(&grid).map_err(|e| UsageError(e.to_string()))?;
    let traj = evolve(&c, &initial)?;
    write_trajectory(out, &grid, &traj)?;
    let report = EvolveReport {
        config: &c,
        snapshots: traj.times.len(),
        final_time: *traj.times.last().unwrap_or(&0.0),
        max_drift_e: traj.invariants.max_drift_e(),
        max_drift_f2: traj.invariants.max_drift_f2(),
        min_positivity: traj.positivity_minima.iter().copied().fold(f64::INFINITY, f64::min),
        warnings: &traj.warnings,
    };
    out.json("report.json", &report)?;
    Ok(Outcome { passed: true, grid: Some(c.grid), schemes: vec![Scheme::of(&c)] })
}

fn write_trajectory(out: &mut Outputs, grid: &Grid, traj: &Trajectory) -> Result<()> {
    write_invariants(out, "invariants.csv", &traj.invariants)?;
    out.dump("trajectory.bin", &traj.states, &traj.times, &traj.config)?;
    let x: Vec<f64> = grid.points().collect();
    out.csv("final_state.csv", &[("x", Column::F(&x)), ("value", Column::F(traj.last()))])?;
    out.svg(
        "final_state.svg",
        &format!("state at t = {}", traj.times.last().unwrap_or(&0.0)),
        &x,
        &[("initial", &traj.states[0]), ("final", traj.last())],
    )
}

#[derive(Serialize)]
struct SpectrumReport {
    eigen: bfamily_core::linops::EigenReport,
    coercivity: bfamily_core::linops::CoercivityReport,
    passed: bool,
}

pub fn spectrum_cmd(s: &Settings, out: &mut Outputs) -> Result<Outcome> {
    let p = params(s)?;
    let grid = grid_of(s, 80.0, 1024)?;
    let eigen = spectrum_h(&assemble_h(&grid, &p, Discretization::Fourier), &p, 6)?;
    let window = s.window.unwrap_or_else(|| default_coercivity_window(&p));
    let coercivity = coercivity_estimate(&grid, &p, window)?;
    let passed = eigen.lambda0_rel_error <= 1e-6
        && eigen.kernel.abs() <= 1e-7
        && eigen.kernel_overlap >= 1.0 - 1e-6
        && coercivity.lambda1 > 0.0;
    let idx: Vec<f64> = (0..eigen.eigenvalues.len()).map(|i| i as f64).collect();
    let decay = eigen.decay.clone();
    out.csv(
        "eigenvalues.csv",
        &[
            ("index", Column::F(&idx)),
            ("eigenvalue", Column::F(&eigen.eigenvalues)),
            ("discrete", Column::B(&eigen.discrete)),
            ("decay", Column::F(&decay)),
            ("residual", Column::F(&eigen.residuals)),
        ],
    )?;
    out.json("spectrum.json", &SpectrumReport { eigen, coercivity, passed })?;
    Ok(Outcome { passed, grid: Some(grid.spec()), schemes: vec![] })
}

/// Smooth test fields decaying like `Q²`, orthogonal to `Q'`.
pub fn random_fields(grid: &Grid, p: &LeftonParams, seed: u64, count: usize) -> Vec<bfamily_core::Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let c: [f64; 6] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.2..2.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.2..2.0),
                rng.gen_range(0.0..6.0),
            ];
            let v = grid.sample(|x| {
                p.big_q_at(x).powi(2) * (c[0] + c[1] * (c[2] * x).cos() + c[3] * (c[4] * x + c[5]).sin() + 0.1 * x)
            });
            project_out_translation(grid, &v, p)
        })
        .collect()
}

pub const COMPOSITION_TOLERANCE: f64 = 1e-6;
pub const COMPOSITION_FIELDS: usize = 10;

#[derive(Serialize)]
struct VerifyReport {
    identities: bfamily_core::linops::VerificationReport,
    seed: u64,
    compositions: Vec<CompositionResidual>,
    composition_tolerance: f64,
    passed: bool,
}

pub fn verify_cmd(s: &Settings, seed: u64, out: &mut Outputs) -> Result<Outcome> {
    let p = params(s)?;
    let grid = grid_of(s, 80.0, 1024)?;
    let identities = verify_operator_identities(&grid, &p)?;
    // the composition routes need the finer spacing to reach their tolerance
    let fine = Grid::new(grid.length(), 2 * grid.len())?;
    let compositions = random_fields(&fine, &p, seed, COMPOSITION_FIELDS)
        .iter()
        .map(|v| composition_residual(&fine, v, &p))
        .collect::<bfamily_core::Result<Vec<_>>>()?;
    let passed = identities.passed
        && compositions
            .iter()
            .all(|r| r.bl <= COMPOSITION_TOLERANCE && r.lb <= COMPOSITION_TOLERANCE && !r.lb_zero_mode);
    out.json(
        "verify.json",
        &VerifyReport { identities, seed, compositions, composition_tolerance: COMPOSITION_TOLERANCE, passed },
    )?;
    Ok(Outcome { passed, grid: Some(grid.spec()), schemes: vec![] })
}

pub fn modulate_cmd(s: &Settings, out: &mut Outputs) -> Result<Outcome> {
    let input = s
        .input
        .as_ref()
        .ok_or_else(|| UsageError("modulate needs --input <trajectory.bin>".into()))?;
    let (side, states) = read_dump(input)?;
    if side.config.form == Form::Linearized {
        return Err(UsageError("a linearized trajectory holds perturbations, not momentum densities".into()).into());
    }
    let mut config = side.config.clone();
    // parameters of the reference lefton may be overridden, the grid may not
    if s.b.is_some() || s.amplitude.is_some() || s.x_star.is_some() {
        config.b = s.b.unwrap_or(config.b);
        config.amplitude = s.amplitude.unwrap_or(config.amplitude);
        config.x_star = s.x_star.unwrap_or(config.x_star);
    }
    let p = config.lefton_params().map_err(|e| UsageError(e.to_string()))?;
    let traj = Trajectory {
        times: side.times.clone(),
        states,
        invariants: InvariantSeries::default(),
        positivity_minima: Vec::new(),
        config: config.clone(),
        warnings: Vec::new(),
    };
    let series = modulation_series_in(&traj, &p, s.window)?;
    write_modulation(out, &series)?;
    out.json("modulation.json", &series)?;
    Ok(Outcome { passed: true, grid: Some(config.grid), schemes: vec![Scheme::of(&config)] })
}

pub fn stability_cmd(s: &Settings, out: &mut Outputs) -> Result<Outcome> {
    let mut c = default_stability_config();
    s.apply(&mut c)?;
    if c.form != Form::Momentum {
        return Err(UsageError("the stability experiment evolves the momentum form".into()).into());
    }
    c.lefton_params().map_err(|e| UsageError(e.to_string()))?;
    let report = experiment_stability(&c)?;
    write_report(out, &report)?;
    if let Some(series) = &report.data.modulation {
        write_modulation(out, series)?;
    }
    if let Some(d) = &report.data.diagnostics {
        out.csv(
            "diagnostics.csv",
            &[
                ("t", Column::F(&d.times)),
                ("I", Column::F(&d.i_total)),
                ("J", Column::F(&d.j_part)),
                ("E_eps", Column::F(&d.e_eps)),
                ("tail_h1", Column::F(&d.tail_h1)),
                ("orbit_distance", Column::F(&d.orbit_distance)),
            ],
        )?;
        let log10 = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x.abs().max(1e-300).log10()).collect() };
        let (tail, orbit) = (log10(&d.tail_h1), log10(&d.orbit_distance));
        out.svg("diagnostics.svg", "log10 tail and orbit distance", &d.times, &[("tail", &tail), ("orbit", &orbit)])?;
    }
    if let Some(fit) = &report.monotonicity {
        out.csv(
            "monotonicity.csv",
            &[("x0", Column::F(&fit.x0)), ("defect", Column::F(&fit.defect)), ("magnitude", Column::F(&fit.magnitude))],
        )?;
    }
    Ok(Outcome { passed: report.passed(), grid: Some(c.grid), schemes: vec![Scheme::of(&c)] })
}

fn write_report(out: &mut Outputs, report: &ExperimentReport) -> Result<()> {
    for (label, inv) in &report.data.invariants {
        write_invariants(out, &format!("invariants_{}.csv", slug(label)), inv)?;
    }
    for (label, state) in &report.data.final_states {
        let c = report
            .configs
            .iter()
            .find(|c| report.configs.len() == 1 || format!("b={}", c.b) == *label)
            .ok_or_else(|| anyhow!("no config for {label}"))?;
        let grid = Grid::from_spec(c.grid)?;
        let x: Vec<f64> = grid.points().collect();
        let name = slug(label);
        out.csv(&format!("final_{name}.csv"), &[("x", Column::F(&x)), ("value", Column::F(state))])?;
        out.svg(&format!("final_{name}.svg"), &format!("final state, {label}"), &x, &[(label.as_str(), state)])?;
    }
    out.json("report.json", report)
}

fn slug(label: &str) -> String {
    label.replace('=', "").replace('-', "m").replace('.', "p")
}

pub fn regimes_cmd(s: &Settings, out: &mut Outputs) -> Result<Outcome> {
    let mut configs = default_regime_configs();
    for c in &mut configs {
        // the regime set is fixed; only resolution and duration are adjustable
        let local = Settings {
            length: s.length,
            n: s.n,
            dt: s.dt,
            t_final: s.t_final,
            stride: s.stride,
            dealias: s.dealias,
            ..Default::default()
        };
        local.apply(c)?;
    }
    let report = experiment_regimes(&configs)?;
    write_report(out, &report)?;
    if let Some(census) = &report.peak_census {
        let counts: Vec<f64> = census.counts.iter().map(|&c| c as f64).collect();
        out.csv("peaks.csv", &[("t", Column::F(&census.times)), ("count", Column::F(&counts))])?;
    }
    Ok(Outcome {
        passed: report.passed(),
        grid: configs.first().map(|c| c.grid),
        schemes: configs.iter().map(Scheme::of).collect(),
    })
}
