//! Probes of the weighted Moser–Trudinger–Adams inequality
//! `log int e^{n|u - ubar|} e^{n gamma} dx <= C + coefficient * int |(-Delta)^{n/4} u|^2 dx`
//! and of the Hardy–Sobolev ratio on the unit ball.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QcurvError, Result};
use crate::grid::{lambda_n, sphere_area, Field, RadialGrid, WeightSpec};
use crate::operator::RadialOperator;
use crate::quad::gauss_legendre;

/// `int |grad u|^2` (n = 2) or `int (Delta u)^2` (n = 4), zero-flux closure at `R_max`.
pub fn halfpower_energy(u: &Field, grid: &RadialGrid) -> Result<f64> {
    grid.check(u)?;
    Ok(RadialOperator::new(grid).energy(u.values()))
}

/// `n / (2 Lambda_n min{eps, 1})`
pub fn mta_coefficient(dim: usize, epsilon: f64) -> f64 {
    dim as f64 / (2.0 * lambda_n(dim) * epsilon.min(1.0))
}

/// `n^2 / (4 b_n min{eps, 1})` with `b_n = n (2 pi)^n / |S^{n-1}|`.
pub fn mta_coefficient_via_bn(dim: usize, epsilon: f64) -> f64 {
    let n = dim as f64;
    let b_n = n * (2.0 * std::f64::consts::PI).powi(dim as i32) / sphere_area(dim - 1);
    n * n / (4.0 * b_n * epsilon.min(1.0))
}

/// `e^{n gamma} = 2^{n(1+eps)/2} (1 + r^2)^{-n(1+eps)/2}`
pub fn mta_weight(dim: usize, epsilon: f64) -> Result<impl Fn(f64) -> f64> {
    let w = WeightSpec::new(dim, epsilon)?;
    let c = w.bound_constant();
    Ok(move |r: f64| c * w.value(r))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// `u = 0`
    Zero,
    /// Tapered sums of radial Dirichlet modes of the unit ball, `sum_k c_k J_nu(k pi r) / (k pi r)^nu`.
    FourierBessel { terms: usize },
    /// `2 phi(r / lambda)` with `phi(s) = (1 - s^2)^3_+`, `log10 lambda` stratified over `[-2, 2]`.
    ScaledBumps,
    /// `2 min(t, log(1/r))`, smoothed and cut off past r = 1, `t` stratified over `[1, max_level]`.
    /// Amplitude 2 is where the exponential and energy terms grow at the same rate in `t`.
    MoserLogs { max_level: f64 },
    /// Members cycle through the three non-trivial generators.
    Mixed { terms: usize, max_level: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFamily {
    pub generator: Generator,
    pub count: usize,
    pub seed: u64,
}

impl TrialFamily {
    fn rng(&self, member: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(member as u64 + 1);
        rng
    }

    fn stride(&self) -> usize {
        match self.generator {
            Generator::Mixed { .. } => 3,
            _ => 1,
        }
    }

    /// Position of member `i`'s scalar parameter in `[0, 1)`. Members of one generator
    /// type are paired (`i`, `i + stride`); each pair shares a stratum of width `1 / pairs`.
    fn level(&self, i: usize, rng: &mut ChaCha8Rng) -> f64 {
        let s = self.stride();
        let kind = i % s;
        let of_kind = (self.count + s - 1 - kind) / s;
        let pairs = (of_kind + 1) / 2;
        let stratum = (i / s) / 2;
        (stratum as f64 + rng.gen::<f64>()) / pairs.max(1) as f64
    }

    /// Member `i`, reproducible from `(seed, i, count)`.
    pub fn member(&self, i: usize, grid: &RadialGrid) -> Field {
        let mut rng = self.rng(i);
        let level = self.level(i, &mut rng);
        let dim = grid.dim();
        match self.generator {
            Generator::Zero => grid.zeros(),
            Generator::FourierBessel { terms } => fourier_bessel(grid, dim, terms, level, &mut rng),
            Generator::ScaledBumps => scaled_bump(grid, level),
            Generator::MoserLogs { max_level } => moser(grid, max_level, level),
            Generator::Mixed { terms, max_level } => match i % 3 {
                0 => fourier_bessel(grid, dim, terms, level, &mut rng),
                1 => scaled_bump(grid, level),
                _ => moser(grid, max_level, level),
            },
        }
    }

    /// Calibration and validation index sets. A seeded coin sends one member of each
    /// stratum pair to calibration and the other to validation.
    pub fn split(&self) -> (Vec<usize>, Vec<usize>) {
        let s = self.stride();
        let mut rng = self.rng(0);
        let (mut cal, mut val) = (Vec::new(), Vec::new());
        for i in 0..self.count {
            if (i / s) % 2 == 1 {
                continue;
            }
            let partner = i + s;
            let first = rng.gen_bool(0.5);
            if partner < self.count {
                let (a, b) = if first { (i, partner) } else { (partner, i) };
                cal.push(a);
                val.push(b);
            } else if first {
                cal.push(i);
            } else {
                val.push(i);
            }
        }
        cal.sort_unstable();
        val.sort_unstable();
        (cal, val)
    }
}

/// `J_nu(x) / x^nu` for `nu = n/2 - 1`, from `J_m(x) = (1/pi) int_0^pi cos(m t - x sin t) dt`.
fn bessel_profile(dim: usize, x: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let m = (dim / 2 - 1) as f64;
    if x < 1e-6 {
        // leading term 1 / (2^nu nu!)
        return if dim == 2 { 1.0 } else { 0.5 };
    }
    let (nodes, weights) = rule;
    let panels = 8;
    let h = std::f64::consts::PI / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        for (t, w) in nodes.iter().zip(weights) {
            let th = mid + 0.5 * h * t;
            s += w * 0.5 * h * (m * th - x * th.sin()).cos();
        }
    }
    s / std::f64::consts::PI / x.powf(m)
}

fn taper(r: f64) -> f64 {
    if r < 1.0 {
        (1.0 - r * r).powi(2)
    } else {
        0.0
    }
}

fn fourier_bessel(grid: &RadialGrid, dim: usize, terms: usize, level: f64, rng: &mut ChaCha8Rng) -> Field {
    let rule = gauss_legendre(16);
    let coeffs: Vec<f64> = (1..=terms.max(1)).map(|k| rng.gen_range(-1.0..1.0) / k as f64).collect();
    let amp = 0.1 + 1.9 * level;
    let pi = std::f64::consts::PI;
    grid.field_from_fn(|r| {
        if r >= 1.0 {
            return 0.0;
        }
        let s: f64 =
            coeffs.iter().enumerate().map(|(k, c)| c * bessel_profile(dim, (k + 1) as f64 * pi * r, &rule)).sum();
        amp * s * taper(r)
    })
}

fn scaled_bump(grid: &RadialGrid, level: f64) -> Field {
    let lambda = 10f64.powf(4.0 * level - 2.0);
    grid.field_from_fn(|r| {
        let s = r / lambda;
        if s < 1.0 {
            2.0 * (1.0 - s * s).powi(3)
        } else {
            0.0
        }
    })
}

/// Smooth cutoff, 1 on `[0, 1]`, 0 from 2 on.
fn cutoff(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let x = 2.0 - r;
        x * x * x * (x * (6.0 * x - 15.0) + 10.0)
    }
}

fn moser(grid: &RadialGrid, max_level: f64, level: f64) -> Field {
    let t = 1.0 + (max_level - 1.0).max(0.0) * level;
    let d2 = (-2.0 * t).exp();
    grid.field_from_fn(|r| 2.0 * cutoff(r) * -0.5 * ((r * r + d2) / (1.0 + d2)).ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialGap {
    pub trial: usize,
    pub energy: f64,
    /// `log int e^{n|u - ubar|} e^{n gamma} dx`
    pub lhs: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtaReport {
    pub dim: usize,
    pub epsilon: f64,
    pub coefficient: f64,
    pub gaps: Vec<TrialGap>,
    /// Trials dropped for non-finite values.
    pub rejected: Vec<usize>,
    pub c_fit: f64,
    pub margin: f64,
    pub violations: usize,
}

/// `(energy, lhs, gap)` for one field, or `None` when something overflows.
pub fn mta_gap(u: &Field, epsilon: f64, grid: &RadialGrid) -> Result<Option<(f64, f64, f64)>> {
    grid.check(u)?;
    let dim = grid.dim();
    let n = dim as f64;
    let weight = mta_weight(dim, epsilon)?;
    let log_w: Vec<f64> = grid.nodes().iter().zip(grid.weights()).map(|(r, w)| w.ln() + weight(*r).ln()).collect();
    let gw: Vec<f64> = grid.nodes().iter().zip(grid.weights()).map(|(r, w)| w * weight(*r)).collect();
    let total: f64 = gw.iter().sum();
    let ubar = u.values().iter().zip(&gw).map(|(u, w)| u * w).sum::<f64>() / total;
    let expo: Vec<f64> = u.values().iter().zip(&log_w).map(|(u, lw)| n * (u - ubar).abs() + lw).collect();
    let m = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lhs = m + expo.iter().map(|e| (e - m).exp()).sum::<f64>().ln();
    let energy = halfpower_energy(u, grid)?;
    let gap = lhs - mta_coefficient(dim, epsilon) * energy;
    Ok(if lhs.is_finite() && energy.is_finite() && gap.is_finite() { Some((energy, lhs, gap)) } else { None })
}

/// Evaluates every member, calibrates `C` on one half and counts validation violations.
pub fn mta_scan(family: &TrialFamily, epsilon: f64, grid: &RadialGrid, margin: f64) -> Result<MtaReport> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(QcurvError::InvalidParameter(format!("epsilon {epsilon} must be positive")));
    }
    if family.count < 2 {
        return Err(QcurvError::InvalidParameter("a scan needs at least two trials".into()));
    }
    let evaluated: Vec<(usize, Option<(f64, f64, f64)>)> = (0..family.count)
        .into_par_iter()
        .map(|i| mta_gap(&family.member(i, grid), epsilon, grid).map(|g| (i, g)))
        .collect::<Result<_>>()?;
    let mut gaps = Vec::new();
    let mut rejected = Vec::new();
    let mut by_trial = vec![None; family.count];
    for (i, g) in evaluated {
        match g {
            Some((energy, lhs, gap)) => {
                gaps.push(TrialGap { trial: i, energy, lhs, gap });
                by_trial[i] = Some(gap);
            }
            None => {
                log::warn!("trial {i} overflowed and was rejected");
                rejected.push(i);
            }
        }
    }
    let (cal, val) = family.split();
    let c_fit = cal.iter().filter_map(|&i| by_trial[i]).fold(f64::NEG_INFINITY, f64::max);
    let violations = val.iter().filter_map(|&i| by_trial[i]).filter(|&g| g > c_fit + margin).count();
    Ok(MtaReport {
        dim: grid.dim(),
        epsilon,
        coefficient: mta_coefficient(grid.dim(), epsilon),
        gaps,
        rejected,
        c_fit,
        margin,
        violations,
    })
}

/// First and second derivatives by three-point differences on the non-uniform grid.
fn radial_derivatives(r: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = r.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 0..n {
        // interior stencil, shifted one node at the ends
        let c = i.clamp(1, n - 2);
        let (x0, x1, x2) = (r[c - 1], r[c], r[c + 1]);
        let (y0, y1, y2) = (u[c - 1], u[c], u[c + 1]);
        let x = r[i];
        let l0 = (2.0 * x - x1 - x2) / ((x0 - x1) * (x0 - x2));
        let l1 = (2.0 * x - x0 - x2) / ((x1 - x0) * (x1 - x2));
        let l2 = (2.0 * x - x0 - x1) / ((x2 - x0) * (x2 - x1));
        d1[i] = l0 * y0 + l1 * y1 + l2 * y2;
        d2[i] = 2.0 * (y0 / ((x0 - x1) * (x0 - x2)) + y1 / ((x1 - x0) * (x1 - x2)) + y2 / ((x2 - x0) * (x2 - x1)));
    }
    (d1, d2)
}

/// `||u / r^k||_{L^p(B_1)} / ||grad^k u||_{L^p(B_1)}` for `k` in {1, 2}; 0 for `u = 0`.
///
/// For `k = 2` the Hessian norm of a radial function is `sqrt(u_rr^2 + (n-1)(u_r/r)^2)`.
pub fn hardy_ratio(u: &Field, k: usize, p: f64, grid: &RadialGrid) -> Result<f64> {
    grid.check(u)?;
    let dim = grid.dim();
    if !(k == 1 || k == 2) {
        return Err(QcurvError::InvalidParameter(format!("Hardy order k = {k} must be 1 or 2")));
    }
    if !(p >= 1.0) || k as f64 * p >= dim as f64 {
        return Err(QcurvError::HardyExponent { k, p, n: dim });
    }
    let r = grid.nodes();
    let scale = u.sup_norm();
    if scale == 0.0 {
        return Ok(0.0);
    }
    if r.iter().zip(u.values()).any(|(r, v)| *r > 1.0 && v.abs() > 1e-12 * scale) {
        return Err(QcurvError::InvalidParameter("Hardy ratio needs u supported in the unit ball".into()));
    }
    let (d1, d2) = radial_derivatives(r, u.values());
    let w = grid.weights();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..r.len() {
        if r[i] > 1.0 {
            break;
        }
        num += w[i] * (u[i] / r[i].powi(k as i32)).abs().powf(p);
        let g = if k == 1 { d1[i].abs() } else { (d2[i] * d2[i] + (dim as f64 - 1.0) * (d1[i] / r[i]).powi(2)).sqrt() };
        den += w[i] * g.powf(p);
    }
    if den == 0.0 {
        return Err(QcurvError::InvalidParameter("gradient norm vanished on the grid".into()));
    }
    Ok((num / den).powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Stretch;

    #[test]
    fn coefficient_identity() {
        for dim in [2usize, 4] {
            for eps in [0.25, 0.5, 1.0, 2.0] {
                let a = mta_coefficient(dim, eps);
                let b = mta_coefficient_via_bn(dim, eps);
                assert!((a - b).abs() <= 1e-12 * a, "{dim} {eps}");
            }
        }
    }

    #[test]
    fn bessel_profiles_match_series() {
        let rule = gauss_legendre(16);
        for &x in &[0.3f64, 1.0, 4.0, 9.0] {
            // power series of J_0 and J_1(x)/x
            let mut j0 = 0.0;
            let mut j1x = 0.0;
            let mut term = 1.0;
            for m in 0..40 {
                if m > 0 {
                    term *= -(x * x / 4.0) / (m as f64 * m as f64);
                }
                j0 += term;
                j1x += term / (2.0 * (m as f64 + 1.0));
            }
            assert!((bessel_profile(2, x, &rule) - j0).abs() < 1e-12, "{x}");
            assert!((bessel_profile(4, x, &rule) - j1x).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn split_is_a_partition() {
        let fam = TrialFamily { generator: Generator::ScaledBumps, count: 11, seed: 4 };
        let (a, b) = fam.split();
        assert_eq!(a.len(), 5);
        let mut all: Vec<usize> = a.iter().chain(&b).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
    }

    #[test]
    fn members_are_reproducible() {
        let g = RadialGrid::new(2, 200, 100.0, Stretch::default()).unwrap();
        let fam = TrialFamily { generator: Generator::Mixed { terms: 4, max_level: 5.0 }, count: 6, seed: 9 };
        for i in 0..6 {
            assert_eq!(fam.member(i, &g), fam.member(i, &g));
        }
    }
}
