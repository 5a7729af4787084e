use proptest::prelude::*;
use qcurv_core::grid::Stretch;
use qcurv_core::ineq::{mta_coefficient, mta_gap};
use qcurv_core::quad::composite_gauss;
use qcurv_core::{halfpower_energy, hardy_ratio, mta_scan, Generator, QcurvError, RadialGrid, TrialFamily};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn grid(dim: usize, n: usize, r_max: f64) -> RadialGrid {
    RadialGrid::new(dim, n, r_max, Stretch::default()).unwrap()
}

fn fine(dim: usize, n: usize) -> RadialGrid {
    RadialGrid::new(dim, n, 1e4, Stretch::Geometric { r_min: 1e-6 }).unwrap()
}

fn bump(a: f64) -> impl Fn(f64) -> f64 {
    move |r| {
        let s = r / a;
        if s < 1.0 {
            (1.0 - s * s).powi(3)
        } else {
            0.0
        }
    }
}

#[test]
fn dirichlet_energy_of_a_gaussian() {
    let g = grid(2, 2000, 50.0);
    let e = halfpower_energy(&g.field_from_fn(|r| (-r * r).exp()), &g).unwrap();
    assert!((e / PI - 1.0).abs() < 1e-3, "{e}");
}

#[test]
fn laplacian_energy_of_a_gaussian() {
    // Delta e^{-r^2} = (4r^2 - 8) e^{-r^2}; int (Delta u)^2 = 6 pi^2
    let g = grid(4, 2000, 50.0);
    let e = halfpower_energy(&g.field_from_fn(|r| (-r * r).exp()), &g).unwrap();
    let direct = 2.0
        * PI
        * PI
        * composite_gauss(|r| ((4.0 * r * r - 8.0) * (-r * r).exp()).powi(2) * r.powi(3), 0.0, 10.0, 200, 12);
    assert!((direct / (6.0 * PI * PI) - 1.0).abs() < 1e-12);
    assert!((e / direct - 1.0).abs() < 1e-3, "{e} vs {direct}");
}

#[test]
fn energy_is_dilation_invariant_and_quadratic() {
    for dim in [2, 4] {
        let g = fine(dim, 3000);
        let e1 = halfpower_energy(&g.field_from_fn(bump(0.5)), &g).unwrap();
        let e2 = halfpower_energy(&g.field_from_fn(bump(5.0)), &g).unwrap();
        let e3 = halfpower_energy(&g.field_from_fn(|r| 3.0 * bump(0.5)(r)), &g).unwrap();
        assert!((e2 / e1 - 1.0).abs() < 1e-3, "dim {dim}: {e1} vs {e2}");
        assert!((e3 / e1 - 9.0).abs() < 1e-9);
    }
}

#[test]
fn zero_field_gap_is_the_weight_mass() {
    // at eps = 1 the weight is the round sphere density: mass |S^n|
    for (dim, area) in [(2, 4.0 * PI), (4, 8.0 * PI * PI / 3.0)] {
        let g = fine(dim, 3000);
        let (energy, lhs, gap) = mta_gap(&g.zeros(), 1.0, &g).unwrap().unwrap();
        assert_eq!(energy, 0.0);
        assert!((lhs - area.ln()).abs() < 1e-4, "dim {dim}: {lhs} vs {}", area.ln());
        assert_eq!(gap, lhs);
    }
}

#[test]
fn zero_family_scan_is_flat() {
    let g = fine(2, 1500);
    let fam = TrialFamily { generator: Generator::Zero, count: 20, seed: 1 };
    let rep = mta_scan(&fam, 0.5, &g, 0.1).unwrap();
    assert_eq!(rep.gaps.len(), 20);
    assert!(rep.gaps.iter().all(|t| t.gap == rep.c_fit));
    assert_eq!(rep.violations, 0);
}

#[test]
fn moser_family_has_no_violations() {
    for dim in [2, 4] {
        let g = fine(dim, 3000);
        for eps in [0.5, 1.0, 2.0] {
            let fam = TrialFamily { generator: Generator::MoserLogs { max_level: 8.0 }, count: 60, seed: 3 };
            let rep = mta_scan(&fam, eps, &g, 0.1).unwrap();
            assert!(rep.rejected.is_empty());
            assert_eq!(rep.violations, 0, "dim {dim} eps {eps}: c_fit {}", rep.c_fit);
        }
    }
}

#[test]
fn coefficient_decreases_then_saturates() {
    for dim in [2, 4] {
        let eps = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 3.0];
        let c: Vec<f64> = eps.iter().map(|&e| mta_coefficient(dim, e)).collect();
        assert!(c.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(c[4], c[6]);
    }
}

#[test]
fn each_half_covers_the_bump_scales() {
    let g = fine(2, 3000);
    let fam = TrialFamily { generator: Generator::ScaledBumps, count: 40, seed: 11 };
    let (cal, val) = fam.split();
    assert_eq!(cal.len(), 20);
    assert_eq!(val.len(), 20);
    let support = |i: usize| {
        let u = fam.member(i, &g);
        let r = g.nodes();
        let last = u.values().iter().rposition(|v| *v > 0.0).unwrap();
        r[last].log10()
    };
    for half in [&cal, &val] {
        let mut s: Vec<f64> = half.iter().map(|&i| support(i)).collect();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let widest = s.windows(2).map(|w| w[1] - w[0]).fold(s[0] + 2.0, f64::max).max(2.0 - s[19]);
        // one draw per stratum of width 4/20 decades
        assert!(widest < 2.0 * 4.0 / 20.0 + 0.01, "widest hole {widest}");
    }
}

#[test]
fn mixed_scan_is_reproducible() {
    let g = fine(4, 1500);
    let fam = TrialFamily { generator: Generator::Mixed { terms: 4, max_level: 6.0 }, count: 30, seed: 7 };
    let a = mta_scan(&fam, 1.0, &g, 0.1).unwrap();
    let b = mta_scan(&fam, 1.0, &g, 0.1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn scan_rejects_bad_input() {
    let g = fine(2, 500);
    let fam = TrialFamily { generator: Generator::Zero, count: 1, seed: 0 };
    assert!(mta_scan(&fam, 1.0, &g, 0.1).is_err());
    let fam = TrialFamily { count: 4, ..fam };
    assert!(mta_scan(&fam, 0.0, &g, 0.1).is_err());
}

#[test]
fn hardy_ratio_of_zero_is_zero() {
    let g = grid(2, 500, 10.0);
    assert_eq!(hardy_ratio(&g.zeros(), 1, 1.5, &g).unwrap(), 0.0);
}

#[test]
fn hardy_ratio_matches_quadrature() {
    let g = fine(2, 3000);
    let u = g.field_from_fn(|r| if r < 1.0 { (1.0 - r * r).powi(2) } else { 0.0 });
    let p = 1.5;
    // r = s^2 removes the r^{-1/2} endpoint singularity
    let num = composite_gauss(
        |s| {
            let r = s * s;
            ((1.0 - r * r).powi(2) / r).powf(p) * r * 2.0 * s
        },
        0.0,
        1.0,
        400,
        12,
    );
    let den = composite_gauss(|r| (4.0 * r * (1.0 - r * r)).powf(p) * r, 0.0, 1.0, 400, 12);
    let exact = (num / den).powf(1.0 / p);
    let h = hardy_ratio(&u, 1, p, &g).unwrap();
    assert!((h / exact - 1.0).abs() < 1e-3, "{h} vs {exact}");
}

#[test]
fn hardy_exponent_range_is_enforced() {
    let g = grid(4, 500, 10.0);
    let u = g.field_from_fn(bump(0.5));
    assert!(matches!(hardy_ratio(&u, 2, 2.0, &g), Err(QcurvError::HardyExponent { .. })));
    assert!(matches!(hardy_ratio(&u, 1, 4.0, &g), Err(QcurvError::HardyExponent { .. })));
    assert!(hardy_ratio(&u, 3, 1.0, &g).is_err());
    assert!(hardy_ratio(&u, 2, 1.5, &g).unwrap() > 0.0);
}

#[test]
fn hardy_ratio_is_stable_under_refinement() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..50 {
        let dim = if trial % 2 == 0 { 2 } else { 4 };
        let (k, p) = if dim == 2 { (1, rng.gen_range(1.0..1.8)) } else { (2, rng.gen_range(1.0..1.8)) };
        let terms: Vec<(f64, f64)> = (0..3).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.2..1.0))).collect();
        let f = |r: f64| terms.iter().map(|(c, a)| c * bump(*a)(r)).sum::<f64>();
        let coarse = fine(dim, 2000);
        let finer = fine(dim, 4000);
        let h1 = hardy_ratio(&coarse.field_from_fn(f), k, p, &coarse).unwrap();
        let h2 = hardy_ratio(&finer.field_from_fn(f), k, p, &finer).unwrap();
        assert!(h1.is_finite() && h1 > 0.0);
        assert!((h1 / h2 - 1.0).abs() < 5e-3, "trial {trial}: {h1} vs {h2}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gap_ignores_constants(c in -5.0f64..5.0, a in 0.05f64..20.0, eps in 0.2f64..2.5, four in any::<bool>()) {
        let g = fine(if four { 4 } else { 2 }, 1200);
        let u = g.field_from_fn(bump(a));
        let base = mta_gap(&u, eps, &g).unwrap().unwrap();
        let moved = mta_gap(&u.shifted(c), eps, &g).unwrap().unwrap();
        prop_assert!((base.2 - moved.2).abs() < 1e-8, "{} vs {}", base.2, moved.2);
        prop_assert!((base.0 - moved.0).abs() <= 1e-10 * base.0.max(1.0));
    }
}
