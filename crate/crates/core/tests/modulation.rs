use bfamily_core::conservation::window_indices;
use bfamily_core::evolution::{evolve, BumpShape, InitialCondition, SimConfig};
use bfamily_core::modulation::*;
use bfamily_core::{Grid, LeftonParams};
use proptest::prelude::*;

fn setup() -> (Grid, LeftonParams) {
    (Grid::new(80.0, 2048).unwrap(), LeftonParams::new(-3.0, 1.0, 0.0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn recovers_every_modulated_member(rho in -2.0..2.0f64, a in -0.1..0.1f64) {
        let (g, p) = setup();
        let m = g.sample(|x| (1.0 + a) * p.big_q_at(x - rho));
        let f = decompose(&g, &m, &p).unwrap();
        prop_assert!((f.rho - rho).abs() <= 1e-8, "rho {} vs {}", f.rho, rho);
        prop_assert!((f.a - a).abs() <= 1e-8, "a {} vs {}", f.a, a);
    }
}

/// Solves the linearized conditions with Gram entries summed over the same samples.
fn linearized_frame(g: &Grid, p: &LeftonParams, window: f64, w: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut gram = [[0.0; 2]; 2];
    let mut rhs = [0.0; 2];
    for i in window_indices(g, 0.0, window) {
        let x = g.x(i);
        let q = p.big_q_at(x);
        let qp = p.b * p.tanh_at(x) * q;
        let alpha = p.log_alpha_at(x).exp();
        // ε ≈ ρ Q' - a Q + δ w, tested against Q' α and α
        gram[0][0] += qp * qp * alpha;
        gram[0][1] -= q * qp * alpha;
        gram[1][0] += qp * alpha;
        gram[1][1] -= q * alpha;
        rhs[0] -= w(x) * qp * alpha;
        rhs[1] -= w(x) * alpha;
    }
    let det = gram[0][0] * gram[1][1] - gram[0][1] * gram[1][0];
    (
        (rhs[0] * gram[1][1] - gram[0][1] * rhs[1]) / det,
        (gram[0][0] * rhs[1] - gram[1][0] * rhs[0]) / det,
    )
}

#[test]
fn small_bump_matches_linearized_system() {
    let (g, p) = setup();
    let md = Modulator::new(&g, &p).unwrap();
    let bump = |x: f64| (-(x - 1.0) * (x - 1.0)).exp();
    let mut errors = Vec::new();
    for delta in [1e-3, 5e-4] {
        let m = g.sample(|x| p.big_q_at(x) + delta * bump(x));
        let f = md.decompose_anchored(&m, 0.0, 0.0).unwrap();
        let (rho, a) = linearized_frame(&g, &p, md.window(), |x| delta * bump(x));
        assert!(rho.abs() > 1e-5 && a.abs() > 1e-5);
        errors.push(((f.rho - rho).abs(), (f.a - a).abs()));
    }
    let (e1, e2) = (errors[0], errors[1]);
    assert!(e1.0 < 20.0 * 1e-6 && e1.1 < 20.0 * 1e-6, "{e1:?}");
    // quadratic remainder: halving δ divides the error by about four
    for (big, small) in [(e1.0, e2.0), (e1.1, e2.1)] {
        let ratio = big / small;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn frame_moves_linearly_with_the_input() {
    let (g, p) = setup();
    let md = Modulator::new(&g, &p).unwrap();
    let base = g.sample(|x| 1.02 * p.big_q_at(x - 0.4) + 5e-3 * (-(x + 1.0) * (x + 1.0)).exp());
    let f0 = md.decompose_anchored(&base, 0.0, 0.0).unwrap();
    let shift = |delta: f64| {
        let m: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, v)| v + delta * (-(g.x(i) - 0.5).powi(2)).exp())
            .collect();
        let f = md.decompose_anchored(&m, 0.0, 0.0).unwrap();
        (f.rho - f0.rho).abs() + (f.a - f0.a).abs()
    };
    let (d1, d2) = (shift(1e-4), shift(1e-5));
    assert!(d1 > 0.0 && d1 < 1.0);
    assert!((d1 / d2 - 10.0).abs() < 0.5, "{d1} {d2}");
}

#[test]
fn perturbed_run_stays_decomposable_and_orthogonal() {
    let p = LeftonParams::new(-3.0, 1.0, 0.0).unwrap();
    let mut c = SimConfig::lefton(-3.0, 1.0);
    c.grid.count = 1024;
    c.dt = 1e-2;
    c.t_final = 6.0;
    c.stride = 50;
    c.initial = InitialCondition::LeftonPerturbed { delta: 1e-2, centre: 2.0, shape: BumpShape::Gauss };
    let g = Grid::from_spec(c.grid).unwrap();
    let traj = evolve(&c, &c.initial_field(&g).unwrap()).unwrap();
    let s = modulation_series(&traj, &p).unwrap();
    assert_eq!(s.frames.len(), traj.times.len());
    for f in &s.frames {
        for r in f.orthogonality {
            assert!(r.abs() <= 1e-10 * f.norms.h1_alpha + 1e-14, "{r:e} at t = {}", f.t);
        }
    }
    let k1 = s.k1_hat.unwrap();
    assert!(k1.is_finite() && k1 < 1.0);
    // the shift settles: its velocity shrinks over the run
    assert!(s.rho_rate.last().unwrap().abs() < 0.5 * s.rho_rate[0].abs());
}

#[test]
fn exact_lefton_run_has_no_drift() {
    let p = LeftonParams::new(-3.0, 1.0, 0.0).unwrap();
    let mut c = SimConfig::lefton(-3.0, 1.0);
    c.grid.count = 1024;
    c.dt = 1e-2;
    c.t_final = 2.0;
    c.stride = 20;
    let g = Grid::from_spec(c.grid).unwrap();
    let traj = evolve(&c, &c.initial_field(&g).unwrap()).unwrap();
    let s = modulation_series(&traj, &p).unwrap();
    assert!(s.rho_rate.iter().all(|r| r.abs() < 1e-8));
    assert!(s.frames.iter().all(|f| f.a.abs() < 1e-8));
}
