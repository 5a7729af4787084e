use proptest::prelude::*;
use qcurv_core::background::relative_residual;
use qcurv_core::fit::linear_fit;
use qcurv_core::grid::Stretch;
use qcurv_core::{build_background, lambda_n, modified_curvature, polyharmonic, CurvatureSpec, RadialGrid};

fn grid(dim: usize, n: usize, r_max: f64) -> RadialGrid {
    RadialGrid::new(dim, n, r_max, Stretch::default()).unwrap()
}

#[test]
fn psi_mass_two_dimensions() {
    let g = grid(2, 1000, 1e4);
    let bg = build_background(1.0, &g).unwrap();
    let target = 2.0 * std::f64::consts::PI;
    assert!((bg.psi_mass() / target - 1.0).abs() < 0.01);
}

#[test]
fn psi_mass_four_dimensions() {
    let g = grid(4, 1000, 1e4);
    let bg = build_background(0.5, &g).unwrap();
    let target = 4.0 * std::f64::consts::PI.powi(2);
    eprintln!("n=4 psi mass {} target {target}", bg.psi_mass());
    assert!((bg.psi_mass() / target - 1.0).abs() < 0.01);
}

#[test]
fn psi_vanishes_outside_the_cutoff() {
    for dim in [2, 4] {
        let g = grid(dim, 1000, 1e4);
        let bg = build_background(0.7, &g).unwrap();
        let peak = bg.psi().sup_norm();
        for (i, r) in g.nodes().iter().enumerate() {
            if *r > 0.55 && i + 4 < g.len() {
                assert!(bg.psi()[i].abs() < 1e-6 * peak, "{dim} r={r} {}", bg.psi()[i]);
            }
        }
    }
}

#[test]
fn background_is_pure_log_outside_half() {
    let g = grid(2, 400, 100.0);
    let bg = build_background(0.7, &g).unwrap();
    for (r, u) in g.nodes().iter().zip(bg.u0().values()) {
        if *r >= 0.5 {
            assert!((u + 0.7 * r.ln()).abs() < 1e-14);
        }
    }
}

#[test]
fn polyharmonic_of_constants_vanishes() {
    for dim in [2, 4] {
        let g = grid(dim, 500, 1e3);
        let p = polyharmonic(&g.constant(3.0), &g).unwrap();
        assert!(p.sup_norm() < 1e-9);
    }
}

#[test]
fn polyharmonic_bubbles() {
    let g = grid(2, 2000, 1e3);
    let u = g.field_from_fn(|r| (2.0 / (1.0 + r * r)).ln());
    let p = polyharmonic(&u, &g).unwrap();
    let e = g.field_from_fn(|r| 4.0 / (1.0 + r * r).powi(2));
    let res2 = relative_residual(&g, p.values(), e.values());

    let g = grid(4, 2000, 1e3);
    let u = g.field_from_fn(|r| (2.0 / (1.0 + r * r)).ln());
    let p = polyharmonic(&u, &g).unwrap();
    let e = g.field_from_fn(|r| 96.0 / (1.0 + r * r).powi(4));
    let res4 = relative_residual(&g, p.values(), e.values());
    eprintln!("bubble residuals {res2} {res4}");
    assert!(res2 < 1e-3);
    assert!(res4 < 1e-2);
}

#[test]
fn zero_curvature_gives_zero_k() {
    let g = grid(2, 200, 100.0);
    let bg = build_background(0.5, &g).unwrap();
    let k = modified_curvature(&g.zeros(), &bg).unwrap();
    assert!(k.values().iter().all(|&v| v == 0.0));
}

#[test]
fn k_tail_slope() {
    for (dim, alpha, l) in [(2usize, 0.5, 2.0), (4, 0.8, 3.0), (2, 1.3, 1.0)] {
        let g = grid(dim, 1000, 1e4);
        let bg = build_background(alpha, &g).unwrap();
        let f = CurvatureSpec::PowerDecay { l }.sample(&g).unwrap();
        let k = modified_curvature(&f, &bg).unwrap();
        let (xs, ys): (Vec<f64>, Vec<f64>) = g
            .nodes()
            .iter()
            .zip(k.values())
            .filter(|(r, _)| **r >= g.r_max() / 10.0)
            .map(|(r, k)| (r.ln(), k.abs().ln()))
            .unzip();
        let (slope, _) = linear_fit(&xs, &ys);
        let expect = -(l + dim as f64 * alpha);
        assert!((slope / expect - 1.0).abs() < 0.03, "{slope} vs {expect}");
    }
}

#[test]
fn sign_changing_preset_keeps_positive_part() {
    let g = grid(4, 500, 1e3);
    let bg = build_background(1.0, &g).unwrap();
    let f = CurvatureSpec::SignChanging { l: 4.0, depth: 3.0 }.sample(&g).unwrap();
    assert!(f.min() < 0.0);
    let k = modified_curvature(&f, &bg).unwrap();
    assert!(k.max() > 0.0);
    assert!(k.min() < 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn psi_mass_tracks_alpha(alpha in 0.01f64..1.99) {
        for dim in [2, 4] {
            let g = grid(dim, 800, 1e4);
            let bg = build_background(alpha, &g).unwrap();
            let target = lambda_n(dim) * alpha / 2.0;
            prop_assert!((bg.psi_mass() / target - 1.0).abs() < 0.02);
        }
    }
}
