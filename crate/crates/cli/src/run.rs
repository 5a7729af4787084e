//! `solve` and `sweep`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;

use qcurv_core::diagnostics::{fitted_completeness_exponent, normality_residual, predicted_exponent};
use qcurv_core::{
    asymptotic_slope, obstruction_indicator, solve, KernelTable, Method, Obstruction, RadialGrid, Solution,
    SolverContext,
};

use crate::config::Prepared;

/// Outcome of one `alpha`.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub alpha: f64,
    pub theta: f64,
    pub theta_target: f64,
    pub fitted_exponent: f64,
    pub predicted_exponent: f64,
    pub residual: f64,
    pub converged: bool,
    pub complete: bool,
    pub iterations: usize,
    /// Fixed-point vs minimize gap, when both ran.
    pub disagreement: Option<f64>,
    pub agree: bool,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.converged && self.agree
    }

    fn failed(alpha: f64, theta_target: f64, err: String) -> Self {
        Self {
            alpha,
            theta: f64::NAN,
            theta_target,
            fitted_exponent: f64::NAN,
            predicted_exponent: f64::NAN,
            residual: f64::NAN,
            converged: false,
            complete: false,
            iterations: 0,
            disagreement: None,
            agree: false,
            error: Some(err),
        }
    }
}

#[derive(Serialize)]
struct SolutionRow {
    r: f64,
    u: f64,
    v1: f64,
    density: f64,
}

#[derive(Serialize)]
struct SweepRow {
    alpha: f64,
    theta: f64,
    fitted_exponent: f64,
    predicted_exponent: f64,
    residual: f64,
    converged: bool,
    complete: bool,
}

pub(crate) fn pool(workers: Option<usize>) -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w);
    }
    b.build().context("cannot start worker pool")
}

fn needs_table(p: &Prepared) -> bool {
    p.config.solver.method != Method::Minimize || p.config.diagnostics.normality
}

pub(crate) fn kernel_table(grid: &RadialGrid, max_nodes: usize) -> anyhow::Result<KernelTable> {
    KernelTable::cached(grid, max_nodes).context("kernel table")
}

fn alpha_dir(out: &Path, alpha: f64) -> PathBuf {
    out.join(format!("alpha_{alpha:?}"))
}

fn write_solution(dir: &Path, grid: &RadialGrid, s: &Solution) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(dir.join("solution.csv"))?;
    for (i, r) in grid.nodes().iter().enumerate() {
        w.serialize(SolutionRow { r: *r, u: s.u[i], v1: s.v1[i], density: s.density[i] })?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace(path: &Path, s: &Solution) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in &s.trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// `diagnostics.json`: the report keys, `null` where a toggle is off.
fn diagnostics_json(
    p: &Prepared,
    s: &Solution,
    table: Option<&KernelTable>,
    f: &qcurv_core::Field,
) -> anyhow::Result<(serde_json::Value, f64, f64)> {
    let t = p.config.diagnostics;
    let grid = &p.grid;
    let predicted = predicted_exponent(s.theta, grid.dim());
    let fitted = fitted_completeness_exponent(grid, &s.u)?;
    let normality = match (t.normality, table) {
        (true, Some(tb)) => Some(normality_residual(s, grid, tb)?),
        _ => None,
    };
    let slope = if t.slope { Some(asymptotic_slope(grid, &s.u)?) } else { None };
    let obstruction = if t.obstruction { Some(obstruction_indicator(f, grid)? == Obstruction::Holds) } else { None };
    let v = serde_json::json!({
        "theta": s.theta,
        "theta_target": s.theta_target,
        "normality_residual": normality,
        "asymptotic_slope": slope,
        "completeness_exponent": t.completeness.then_some(fitted),
        "predicted_exponent": t.completeness.then_some(predicted),
        "complete": t.completeness.then_some(predicted > 0.0),
        "obstruction_flag": obstruction,
    });
    Ok((v, fitted, predicted))
}

fn run_one(p: &Prepared, alpha: f64, table: Option<&KernelTable>, dir: &Path) -> anyhow::Result<RunRecord> {
    fs::create_dir_all(dir)?;
    let cfg = p.config.solver.config(alpha);
    let ctx = SolverContext::from_spec(p.grid.clone(), &p.curvature, alpha)?;
    let outcome = solve(&ctx, &cfg, table)?;
    let s = outcome.primary();
    write_solution(dir, &p.grid, s)?;
    write_trace(&dir.join("trace.csv"), s)?;
    for other in outcome.solutions.iter().filter(|o| o.method != s.method) {
        write_trace(&dir.join("trace_fixed_point.csv"), other)?;
    }
    let (diag, fitted, predicted) = diagnostics_json(p, s, table, ctx.curvature())?;
    fs::write(dir.join("diagnostics.json"), serde_json::to_string_pretty(&diag)? + "\n")?;
    let record = RunRecord {
        alpha,
        theta: s.theta,
        theta_target: s.theta_target,
        fitted_exponent: fitted,
        predicted_exponent: predicted,
        residual: outcome.solutions.iter().map(|s| s.residual).fold(0.0, f64::max),
        converged: outcome.converged(),
        complete: predicted > 0.0,
        iterations: s.iterations,
        disagreement: outcome.disagreement,
        agree: outcome.agree,
        error: None,
    };
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    Ok(record)
}

/// Solves every configured `alpha`. A single value writes into the output directory,
/// a list into one `alpha_<value>` subdirectory per run.
pub fn run_all(p: &Prepared, subdirs: bool) -> anyhow::Result<Vec<RunRecord>> {
    let out = p.out().to_path_buf();
    let pool = pool(p.config.workers)?;
    pool.install(|| {
        let table = if needs_table(p) { Some(kernel_table(&p.grid, p.config.kernel.max_nodes)?) } else { None };
        let records = p
            .alphas
            .par_iter()
            .map(|&alpha| {
                let dir = if subdirs { alpha_dir(&out, alpha) } else { out.clone() };
                run_one(p, alpha, table.as_ref(), &dir).unwrap_or_else(|e| {
                    log::error!("alpha = {alpha}: {e:#}");
                    RunRecord::failed(alpha, qcurv_core::lambda_n(p.dim()) * alpha / 2.0, format!("{e:#}"))
                })
            })
            .collect();
        Ok(records)
    })
}

pub fn cmd_solve(p: &Prepared) -> anyhow::Result<bool> {
    let records = run_all(p, p.alphas.len() > 1)?;
    for r in &records {
        log::info!(
            "alpha {} theta {} residual {:e} converged {} agree {}",
            r.alpha,
            r.theta,
            r.residual,
            r.converged,
            r.agree
        );
    }
    Ok(records.iter().all(RunRecord::ok))
}

pub fn cmd_sweep(p: &Prepared) -> anyhow::Result<bool> {
    let records = run_all(p, true)?;
    let mut w = csv::Writer::from_path(p.out().join("sweep.csv"))?;
    for r in &records {
        w.serialize(SweepRow {
            alpha: r.alpha,
            theta: r.theta,
            fitted_exponent: r.fitted_exponent,
            predicted_exponent: r.predicted_exponent,
            residual: r.residual,
            converged: r.converged,
            complete: r.complete,
        })?;
    }
    w.flush()?;
    Ok(records.iter().all(RunRecord::ok))
}
