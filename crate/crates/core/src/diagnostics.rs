//! Structural checks on computed conformal factors: normality, asymptotic
//! slope, completeness exponent and the decay obstruction.

use serde::{Deserialize, Serialize};

use crate::error::{QcurvError, Result};
use crate::fit::linear_fit;
use crate::grid::{lambda_n, Field, RadialGrid};
use crate::kernel::KernelTable;
use crate::solver::Solution;

/// Minimum number of nodes in a fitting window.
pub const MIN_FIT_NODES: usize = 30;

/// Default slack in the obstruction test `r f'/f >= -n/2 - tol`.
pub const OBSTRUCTION_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub theta: f64,
    pub theta_target: f64,
    pub normality_residual: f64,
    pub asymptotic_slope: f64,
    pub completeness_exponent: f64,
    pub predicted_exponent: f64,
    pub complete: bool,
    pub obstruction_flag: bool,
}

impl DiagnosticsReport {
    pub const CSV_HEADER: &'static str =
        "theta,theta_target,normality_residual,asymptotic_slope,completeness_exponent,predicted_exponent,complete,obstruction_flag";

    /// One CSV line matching [`CSV_HEADER`](Self::CSV_HEADER); floats in shortest round-trip form.
    pub fn csv_row(&self) -> String {
        format!(
            "{:?},{:?},{:?},{:?},{:?},{:?},{},{}",
            self.theta,
            self.theta_target,
            self.normality_residual,
            self.asymptotic_slope,
            self.completeness_exponent,
            self.predicted_exponent,
            self.complete,
            self.obstruction_flag
        )
    }
}

/// Indices of the outer decade `[R_max/10, R_max]`.
fn outer_decade(grid: &RadialGrid) -> Result<Vec<usize>> {
    let lo = grid.r_max() / 10.0;
    let idx: Vec<usize> = (0..grid.len()).filter(|&i| grid.nodes()[i] >= lo).collect();
    if idx.len() < MIN_FIT_NODES {
        return Err(QcurvError::InvalidGrid(format!(
            "outer decade holds {} nodes, fits need at least {MIN_FIT_NODES}",
            idx.len()
        )));
    }
    Ok(idx)
}

/// Oscillation over interior nodes of `u - L[density]`.
pub fn normality_oscillation(grid: &RadialGrid, u: &Field, density: &Field, table: &KernelTable) -> Result<f64> {
    grid.check(u)?;
    let pot = table.log_potential(grid, density)?;
    let range = grid.interior();
    let (lo, hi) = range.fold((f64::MAX, f64::MIN), |(lo, hi), i| {
        let w = u[i] - pot[i];
        (lo.min(w), hi.max(w))
    });
    Ok(hi - lo)
}

/// Normality of a solver result: oscillation of `u - L[f e^{nu}]`.
pub fn normality_residual(sol: &Solution, grid: &RadialGrid, table: &KernelTable) -> Result<f64> {
    normality_oscillation(grid, &sol.u, &sol.density, table)
}

/// `d(0, R) = int_0^R e^{u(t)} dt` at every node (trapezoid, with `e^{u(0)}` on `[0, r_0]`).
pub fn ray_distance(grid: &RadialGrid, u: &Field) -> Result<Vec<f64>> {
    grid.check(u)?;
    let r = grid.nodes();
    let e: Vec<f64> = u.values().iter().map(|v| v.exp()).collect();
    let u_origin = grid.value_at_origin(u)?;
    let mut out = Vec::with_capacity(r.len());
    let mut acc = 0.5 * r[0] * (u_origin.exp() + e[0]);
    out.push(acc);
    for i in 1..r.len() {
        acc += 0.5 * (r[i] - r[i - 1]) * (e[i] + e[i - 1]);
        out.push(acc);
    }
    Ok(out)
}

/// `max{1 - 2 theta / Lambda_n, 0}`
pub fn predicted_exponent(theta: f64, dim: usize) -> f64 {
    (1.0 - 2.0 * theta / lambda_n(dim)).max(0.0)
}

/// Slope of `log d(0, R)` against `log R` over the outer decade.
pub fn fitted_completeness_exponent(grid: &RadialGrid, u: &Field) -> Result<f64> {
    let d = ray_distance(grid, u)?;
    let idx = outer_decade(grid)?;
    let xs: Vec<f64> = idx.iter().map(|&i| grid.nodes()[i].ln()).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| d[i].ln()).collect();
    Ok(linear_fit(&xs, &ys).0)
}

/// `(fitted, predicted)` completeness exponents.
pub fn completeness_exponent(sol: &Solution, grid: &RadialGrid) -> Result<(f64, f64)> {
    Ok((fitted_completeness_exponent(grid, &sol.u)?, predicted_exponent(sol.theta, grid.dim())))
}

/// Least-squares slope of `u` against `log r` over the outer decade.
pub fn asymptotic_slope(grid: &RadialGrid, u: &Field) -> Result<f64> {
    grid.check(u)?;
    let idx = outer_decade(grid)?;
    let xs: Vec<f64> = idx.iter().map(|&i| grid.nodes()[i].ln()).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| u[i]).collect();
    Ok(linear_fit(&xs, &ys).0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Obstruction {
    /// `r f'/f >= -n/2` everywhere: no complete metric with finite total curvature exists.
    Holds,
    Fails,
    /// `f` is not positive on the whole grid.
    NotApplicable,
}

/// Discrete `r f'(r) / f(r)` as a centred difference of `log f` in `log r`.
pub fn log_derivative(grid: &RadialGrid, f: &Field) -> Result<Vec<f64>> {
    grid.check(f)?;
    if f.values().iter().any(|&v| v <= 0.0) {
        return Err(QcurvError::NonPositiveCurvature);
    }
    let x: Vec<f64> = grid.nodes().iter().map(|r| r.ln()).collect();
    let y: Vec<f64> = f.values().iter().map(|v| v.ln()).collect();
    let n = x.len();
    Ok((0..n)
        .map(|i| {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            (y[b] - y[a]) / (x[b] - x[a])
        })
        .collect())
}

pub fn obstruction_indicator_with(f: &Field, grid: &RadialGrid, tol: f64) -> Result<Obstruction> {
    let ld = match log_derivative(grid, f) {
        Ok(d) => d,
        Err(QcurvError::NonPositiveCurvature) => return Ok(Obstruction::NotApplicable),
        Err(e) => return Err(e),
    };
    let bound = -(grid.dim() as f64) / 2.0 - tol;
    Ok(if ld.iter().all(|&d| d >= bound) { Obstruction::Holds } else { Obstruction::Fails })
}

/// Checks `r f'/f >= -n/2` at every node.
pub fn obstruction_indicator(f: &Field, grid: &RadialGrid) -> Result<Obstruction> {
    obstruction_indicator_with(f, grid, OBSTRUCTION_TOL)
}

/// Full report for a solver result. `f` is the prescribed curvature on the grid.
pub fn diagnose(sol: &Solution, grid: &RadialGrid, table: &KernelTable, f: &Field) -> Result<DiagnosticsReport> {
    let normality_residual = normality_residual(sol, grid, table)?;
    let (fitted, predicted) = completeness_exponent(sol, grid)?;
    Ok(DiagnosticsReport {
        theta: sol.theta,
        theta_target: sol.theta_target,
        normality_residual,
        asymptotic_slope: asymptotic_slope(grid, &sol.u)?,
        completeness_exponent: fitted,
        predicted_exponent: predicted,
        complete: predicted > 0.0,
        obstruction_flag: obstruction_indicator(f, grid)? == Obstruction::Holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Stretch;

    #[test]
    fn predicted_exponent_formula() {
        let lam = lambda_n(2);
        assert!((predicted_exponent(lam / 4.0, 2) - 0.5).abs() < 1e-15);
        assert_eq!(predicted_exponent(lam, 2), 0.0);
        assert_eq!(predicted_exponent(2.0 * lam, 2), 0.0);
    }

    #[test]
    fn csv_row_has_header_arity() {
        let r = DiagnosticsReport {
            theta: 1.0,
            theta_target: 1.0,
            normality_residual: 0.0,
            asymptotic_slope: -0.5,
            completeness_exponent: 0.5,
            predicted_exponent: 0.5,
            complete: true,
            obstruction_flag: false,
        };
        assert_eq!(r.csv_row().split(',').count(), DiagnosticsReport::CSV_HEADER.split(',').count());
    }

    #[test]
    fn fit_window_needs_enough_nodes() {
        let g = RadialGrid::new(2, 40, 10.0, Stretch::default()).unwrap();
        assert!(asymptotic_slope(&g, &g.zeros()).is_err());
    }
}
