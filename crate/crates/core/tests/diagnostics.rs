use bfamily_core::diagnostics::*;
use bfamily_core::evolution::*;
use bfamily_core::{Grid, LeftonParams};

fn lefton() -> LeftonParams {
    LeftonParams::new(-3.0, 1.0, 0.0).unwrap()
}

fn trajectory(initial: InitialCondition, dt: f64, stride: usize, t_final: f64) -> (Grid, Trajectory) {
    let mut c = SimConfig::lefton(-3.0, 1.0);
    c.grid.count = 2048;
    c.dt = dt;
    c.stride = stride;
    c.t_final = t_final;
    c.initial = initial;
    let g = Grid::from_spec(c.grid).unwrap();
    let t = evolve(&c, &c.initial_field(&g).unwrap()).unwrap();
    (g, t)
}

fn bump() -> InitialCondition {
    InitialCondition::LeftonPerturbed { delta: 1e-2, centre: 2.0, shape: BumpShape::Gauss }
}

#[test]
fn stationary_profile_rate_is_the_weight_drift() {
    // for m = Q only the weight moves, so dI/dt = 4b ∫ (F₂ density) ψ'
    let g = Grid::new(80.0, 2048).unwrap();
    let p = lefton();
    let q = g.sample(|x| p.big_q_at(x));
    let psi = bfamily_core::profiles::PsiL::new(&p);
    for x0 in [-3.0, 0.0, 6.0] {
        let anchor = WeightAnchor::new(&p, 0.0, 0.0, x0);
        let rhs = rate_identity_rhs(&g, &q, &anchor, 0.25, &p).unwrap().total();
        let exact = 4.0 * p.b
            * g.dx()
            * g.points()
                .map(|x| {
                    let density = 2f64.powf(1.0 / 3.0) / x.cosh() * (1.0 + x.tanh().powi(2));
                    density * psi.d1(x + 4.0 * p.b * 0.25 - x0)
                })
                .sum::<f64>();
        assert!(((rhs - exact) / exact).abs() < 1e-9, "x0 = {x0}: {rhs} vs {exact}");
    }
}

#[test]
fn lefton_trajectory_satisfies_the_rate_identity() {
    let (g, t) = trajectory(InitialCondition::Lefton, 1e-3, 1, 0.02);
    let r = rate_identity_residual(&g, &t, &lefton(), 0.0, 0.0, 0.0).unwrap();
    assert!(r.max_residual <= 1e-6, "{:e}", r.max_residual);
}

#[test]
fn constant_state_satisfies_the_rate_identity() {
    let mut c = SimConfig::lefton(-3.0, 1.0);
    c.grid = bfamily_core::GridSpec { length: 40.0, count: 256 };
    c.dt = 1e-5;
    c.stride = 4;
    c.t_final = 2e-4;
    c.initial = InitialCondition::Samples { values: vec![0.7; 256] };
    let g = Grid::from_spec(c.grid).unwrap();
    let t = evolve(&c, &c.initial_field(&g).unwrap()).unwrap();
    let r = rate_identity_residual(&g, &t, &lefton(), 2.0, 0.0, 0.0).unwrap();
    assert!(r.max_residual <= 1e-10, "{:e}", r.max_residual);
}

#[test]
fn perturbed_residual_converges_with_the_square_of_the_stride() {
    let res: Vec<f64> = [10, 20, 40]
        .iter()
        .map(|&s| {
            let (g, t) = trajectory(bump(), 1e-3, s, 1.0);
            rate_identity_residual(&g, &t, &lefton(), 6.0, 0.0, 0.0).unwrap().max_residual
        })
        .collect();
    assert!(res[0] <= 1e-4, "{:e}", res[0]);
    for w in res.windows(2) {
        assert!((3.0..5.0).contains(&(w[1] / w[0])), "{res:?}");
    }
}

#[test]
fn coarse_snapshots_are_refused() {
    let (g, t) = trajectory(bump(), 1e-2, 50, 5.0);
    let err = rate_identity_residual(&g, &t, &lefton(), 6.0, 0.0, 0.0).unwrap_err();
    assert!(matches!(err, bfamily_core::Error::StrideTooCoarse(_)), "{err}");
    let (g, t) = trajectory(bump(), 1e-2, 50, 1.0);
    assert!(matches!(
        rate_identity_residual(&g, &t, &lefton(), 6.0, 0.0, 0.0),
        Err(bfamily_core::Error::TooFewSnapshots(3))
    ));
}

#[test]
fn initial_tail_is_the_perturbation_on_the_right_half_line() {
    let g = Grid::new(80.0, 4096).unwrap();
    let p = lefton();
    let m = g.sample(|x| p.big_q_at(x) + 1e-2 * (-(x - 2.0) * (x - 2.0)).exp());
    let tail = localized_h1_tail(&g, &m, 0.0, 1.0, 1.0, 0.0, &p);
    // composite Simpson on [0, 20] of w² + w'² for w = δ exp(-(x-2)²)
    let (n, h) = (20000, 1e-3);
    let f = |x: f64| {
        let w = 1e-2 * (-(x - 2.0) * (x - 2.0)).exp();
        w * w * (1.0 + 4.0 * (x - 2.0) * (x - 2.0))
    };
    let simpson = h / 3.0
        * (0..=n)
            .map(|i| f(i as f64 * h) * if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 })
            .sum::<f64>();
    // the one-cell cutoff costs O(dx) of the integrand at the edge
    assert!((tail.value - simpson.sqrt()).abs() <= 1e-3 * simpson.sqrt(), "{} vs {}", tail.value, simpson.sqrt());
}

#[test]
fn unperturbed_stability_run_passes_trivially() {
    let mut c = default_stability_config();
    c.t_final = 10.0;
    c.initial = InitialCondition::Lefton;
    let r = experiment_stability(&c).unwrap();
    assert!(r.passed(), "{:?}", r.criteria);
    let d = r.data.diagnostics.unwrap();
    assert!(d.orbit_distance.iter().all(|v| *v < 1e-12));
    assert!(r.data.modulation.unwrap().rho_rate.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn localized_energy_decreases_with_the_anchor() {
    let g = Grid::new(80.0, 2048).unwrap();
    let p = lefton();
    let q = g.sample(|x| p.big_q_at(x));
    let e: Vec<f64> = [-5.0, 0.0, 5.0, 10.0].iter().map(|&x0| functional_e_eps(&g, &q, 0.0, 0.0, x0, &p)).collect();
    assert!(e.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(functional_e_eps(&g, &vec![0.0; 2048], 0.0, 0.0, 3.0, &p), 0.0);
}

#[test]
fn default_stability_run_is_pinned() {
    let r = experiment_stability(&default_stability_config()).unwrap();
    assert!(r.passed(), "{:?}", r.criteria);
    let fit = r.monotonicity.unwrap();
    // pinned after the first validated run
    assert!((fit.exponent - 0.160616).abs() < 1e-5, "{}", fit.exponent);
    assert!(fit.defect.iter().all(|d| *d <= 0.0));
    assert!((r.modulation_window.unwrap() - 5.298292365610485).abs() < 1e-12);
}
