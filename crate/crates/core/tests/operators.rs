use bfamily_core::linops::*;
use bfamily_core::profiles::{lefton_big_q_prime, weight_alpha};
use bfamily_core::{Field, Grid, LeftonParams};
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::f64::consts::PI;

fn lefton(b: f64) -> LeftonParams {
    LeftonParams::new(b, 1.0, 0.0).unwrap()
}

fn spectral_grid() -> Grid {
    Grid::new(80.0, 1024).unwrap()
}

#[test]
fn ground_state_kernel_and_edge_at_b_minus_3() {
    let p = lefton(-3.0);
    let g = spectral_grid();
    let r = spectrum_h(&assemble_h(&g, &p, Discretization::Fourier), &p, 6).unwrap();
    assert!((r.lambda0 - -0.7055116).abs() < 1e-6, "{}", r.lambda0);
    assert!((r.lambda0 - -4.0 * p.k() / 9.0).abs() < 1e-9);
    assert!(r.kernel.abs() < 1e-7);
    assert!(r.kernel_overlap >= 1.0 - 1e-6);
    assert!(r.ground_overlap >= 1.0 - 1e-6);
    assert_eq!(r.discrete_count, 2);

    let edge = r.continuum_edge.unwrap();
    let wide = Grid::new(160.0, 2048).unwrap();
    let r2 = spectrum_h(&assemble_h(&wide, &p, Discretization::Fourier), &p, 4).unwrap();
    let edge2 = r2.continuum_edge.unwrap();
    let exact = 0.0881889;
    assert!(edge > edge2 && edge2 > exact, "{edge} {edge2}");
    assert!((edge2 - exact) / exact < 0.02);
}

#[test]
fn spectral_facts_across_the_regime() {
    let g = spectral_grid();
    for b in [-1.5, -2.0, -5.0] {
        let p = lefton(b);
        let r = spectrum_h(&assemble_h(&g, &p, Discretization::Fourier), &p, 6).unwrap();
        assert!(r.lambda0_rel_error < 1e-6, "b={b}");
        assert!(r.kernel.abs() < 1e-7, "b={b}");
        assert!(r.kernel_overlap >= 1.0 - 1e-6);
        assert!(r.eigenvalues.iter().filter(|v| **v < -1e-7).count() == 1);
        assert!(r.continuum_rel_error.unwrap() < 0.02, "b={b}");
    }
    // a third bound state (2k/b²)(3/16) appears at b = -3/2
    let p = lefton(-1.5);
    let r = spectrum_h(&assemble_h(&g, &p, Discretization::Fourier), &p, 6).unwrap();
    assert_eq!(r.discrete_count, 3);
    let third = h_prefactor(&p) * 3.0 / 16.0;
    assert!((r.eigenvalues[2] - third).abs() < 1e-6 * third);
}

#[test]
fn fourth_order_differences_agree_roughly() {
    let p = lefton(-3.0);
    let g = Grid::new(40.0, 800).unwrap();
    let r = spectrum_h(&assemble_h(&g, &p, Discretization::Fd4), &p, 3).unwrap();
    assert_eq!(r.discretization, Discretization::Fd4);
    assert!(r.lambda0_rel_error < 1e-4);
    assert!(r.kernel.abs() < 1e-4);
}

#[test]
fn identity_table_at_b_minus_3() {
    let p = lefton(-3.0);
    let rep = verify_operator_identities(&spectral_grid(), &p).unwrap();
    for c in &rep.checks {
        assert!(c.passed, "{} {:e}", c.name, c.residual);
    }
    assert!((rep.q2_sq_integral - -5.0 * PI / 6.0).abs() < 1e-9);
    assert!(rep.inverse_sq_pairing < 0.0);
    assert!((rep.inverse_sq_pairing - rep.q2_sq_integral).abs() < 1e-8);
    let qq = rep.checks.iter().find(|c| c.name.starts_with("bQq'")).unwrap();
    assert!(qq.residual <= 1e-10);
    assert!(rep.passed);
}

#[test]
fn identity_table_across_the_regime() {
    for b in [-1.5, -2.0, -5.0] {
        let rep = verify_operator_identities(&spectral_grid(), &lefton(b)).unwrap();
        assert!(rep.passed, "b={b}: {:?}", rep.checks);
    }
}

#[test]
fn closed_forms_vanish_on_known_kernels() {
    let p = lefton(-3.0);
    let g = Grid::new(80.0, 2048).unwrap();
    let idx: Vec<usize> = (0..g.len()).filter(|&i| g.x(i).abs() <= identity_window(&g, &p)).collect();
    let sup = |f: &Field| idx.iter().map(|&i| f[i].abs()).fold(0.0, f64::max);
    let qp = lefton_big_q_prime(&g, &p);
    let scale = 2.0 * p.k() * sup(&g.derivative(&qp, 1).unwrap());
    assert!(sup(&apply_bl_closed(&g, &qp, &p)) < 1e-9 * scale);
    let lb = apply_lb_closed(&g, &Field::constant(g.len(), 2.5), &p);
    assert!(lb.max_abs() < 1e-12);
    let zero = Field::zeros(g.len());
    assert_eq!(apply_lb_closed(&g, &zero, &p).max_abs(), 0.0);
}

#[test]
fn transform_consistency_of_generalized_problem() {
    let p = lefton(-3.0);
    let g = spectral_grid();
    let w = identity_window(&g, &p);
    let l = assemble_l(&g, &p, w).unwrap();
    assert!(l.symmetry_residual() <= 1e-12);
    let alpha: Vec<f64> = l.points.iter().map(|&x| p.log_alpha_at(x).exp()).collect();
    let n = l.size();
    // D^{-1/2} L D^{-1/2} with D = diag(α)
    let red = DMatrix::from_fn(n, n, |i, j| l.matrix[(i, j)] / (alpha[i] * alpha[j]).sqrt());
    let (_, gen_vecs) = sorted_eigen(&red);
    let f: Vec<f64> = (0..n).map(|i| gen_vecs[(i, 0)] / alpha[i].sqrt()).collect();

    let h = assemble_h(&g, &p, Discretization::Fourier);
    let first = (0..g.len()).find(|&i| (g.x(i) - l.points[0]).abs() < 1e-12).unwrap();
    let sub = h.matrix.view((first, first), (n, n)).into_owned();
    let (_, hv) = sorted_eigen(&sub);
    let mapped: Vec<f64> = (0..n).map(|i| f[i] * alpha[i].sqrt()).collect();
    let dot: f64 = (0..n).map(|i| mapped[i] * hv[(i, 0)]).sum();
    let norm: f64 = mapped.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(dot.abs() / norm >= 1.0 - 1e-6);
}

#[test]
fn assemble_l_rejects_overflowing_window() {
    let p = lefton(-3.0);
    assert!(assemble_l(&spectral_grid(), &p, 1e3).is_err());
}

#[test]
fn coercivity_constant_positive_and_resolved() {
    let p = lefton(-3.0);
    let coarse = coercivity_estimate(&spectral_grid(), &p, 12.0).unwrap();
    let fine = coercivity_estimate(&Grid::new(80.0, 2048).unwrap(), &p, 12.0).unwrap();
    assert!(coarse.lambda1 > 0.0);
    assert!(coarse.lambda1_without_sq < 0.0);
    assert!(((coarse.lambda1 - fine.lambda1) / fine.lambda1).abs() <= 0.05);
    // regression constant of this discretization
    assert!((coarse.lambda1 - 0.0135357).abs() < 1e-6, "{}", coarse.lambda1);
}

#[test]
fn weighted_l_quadratic_form_is_symmetric() {
    let p = lefton(-2.0);
    let g = Grid::new(40.0, 256).unwrap();
    let l = assemble_l(&g, &p, 6.0).unwrap();
    assert!(l.symmetry_residual() < 1e-12);
    assert!(!weight_alpha(&g, &p).is_clamped());
}

/// Smooth field decaying like `Q²`, so that `L v` stays localized.
fn smooth_field(g: &Grid, p: &LeftonParams, c: &[f64; 6]) -> Field {
    let v = g.sample(|x| {
        p.big_q_at(x).powi(2)
            * (c[0] + c[1] * (c[2] * x).cos() + c[3] * (c[4] * x + c[5]).sin() + 0.1 * x)
    });
    project_out_translation(g, &v, p)
}

fn coefficients() -> impl Strategy<Value = [f64; 6]> {
    [
        -1.0..1.0f64,
        -1.0..1.0f64,
        0.2..2.0f64,
        -1.0..1.0f64,
        0.2..2.0f64,
        0.0..6.0f64,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn compositions_match_closed_forms(c in coefficients(), bi in 0usize..4) {
        let b = [-1.5, -2.0, -3.0, -5.0][bi];
        let p = lefton(b);
        let g = Grid::new(80.0, 2048).unwrap();
        let v = smooth_field(&g, &p, &c);
        let r = composition_residual(&g, &v, &p).unwrap();
        prop_assert!(r.bl <= 1e-6, "bl {:e}", r.bl);
        prop_assert!(r.lb <= 1e-6, "lb {:e}", r.lb);
        prop_assert!(!r.lb_zero_mode);
    }

    #[test]
    fn b_of_q_is_skew(c in coefficients(), d in coefficients()) {
        let p = lefton(-3.0);
        let g = Grid::new(60.0, 1024).unwrap();
        let bump = |c: &[f64; 6]| {
            let f = g.sample(|x| (-(x - c[5] + 3.0).powi(2) / 3.0).exp() * (c[0] + c[1] * (c[2] * x).cos() + c[3]));
            project_out_translation(&g, &f, &p)
        };
        let (u, w) = (bump(&c), bump(&d));
        let bw = apply_b_of_q(&g, &w, &p).unwrap();
        let bu = apply_b_of_q(&g, &u, &p).unwrap();
        prop_assert!(!bw.zero_mode_flag && !bu.zero_mode_flag);
        let s = g.dot(&u, &bw.value) + g.dot(&w, &bu.value);
        let scale = (g.dot(&u, &u) * g.dot(&bw.value, &bw.value)).sqrt().max(1e-300);
        prop_assert!(s.abs() <= 1e-8 * scale, "{:e}", s.abs() / scale);
    }

    #[test]
    fn h_is_symmetric_as_a_form(c in coefficients(), d in coefficients()) {
        let p = lefton(-3.0);
        let g = Grid::new(40.0, 512).unwrap();
        let f = g.sample(|x| (-x * x / 4.0).exp() * (c[0] + c[1] * (c[2] * x).sin()));
        let h = g.sample(|x| (-x * x / 5.0).exp() * (d[0] + d[1] * (d[2] * x + d[5]).cos()));
        let a = g.dot(&f, &apply_h(&g, &h, &p));
        let b = g.dot(&h, &apply_h(&g, &f, &p));
        prop_assert!((a - b).abs() <= 1e-8 * (a.abs() + b.abs()).max(1e-12));
    }
}

#[test]
fn linearized_flow_matches_composition_route() {
    use bfamily_core::evolution::rhs_linearized;
    let p = lefton(-3.0);
    let g = Grid::new(80.0, 2048).unwrap();
    let w = identity_window(&g, &p);
    let idx: Vec<usize> = (0..g.len()).filter(|&i| g.x(i).abs() <= w).collect();
    let sup = |f: &[f64]| idx.iter().map(|&i| f[i].abs()).fold(0.0, f64::max);
    let cases = [
        g.sample(|x| (-(x - 0.5) * (x - 0.5)).exp()),
        smooth_field(&g, &p, &[0.3, -0.7, 1.1, 0.4, 0.6, 1.0]),
    ];
    for v in &cases {
        let closed = rhs_linearized(&g, v, &p).unwrap();
        let route = apply_bl_composed(&g, v, &p).unwrap().value.scale(1.0 / (1.0 - p.b));
        let diff: Vec<f64> = closed.iter().zip(route.iter()).map(|(a, b)| a - b).collect();
        assert!(sup(&diff) <= 1e-7 * sup(&closed), "{:e}", sup(&diff) / sup(&closed));
    }
}
