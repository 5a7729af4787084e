//! `verify`: invariant suites for the kernel, background and inequality modules.

use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use qcurv_core::ineq::{mta_coefficient, mta_coefficient_via_bn, mta_gap};
use qcurv_core::{
    build_background, greens_consistency, halfpower_energy, mta_scan, sphere_area, RadialOperator, TrialFamily,
};

use crate::config::Prepared;
use crate::run::{kernel_table, pool};

pub const PSI_ALPHAS: usize = 20;
pub const PSI_MASS_TOL: f64 = 0.02;
pub const KERNEL_TOL: f64 = 1e-5;
pub const GREEN_TOL: f64 = 1e-2;
pub const ENERGY_TOL: f64 = 1e-3;
pub const IDENTITY_TOL: f64 = 1e-12;
pub const WEIGHT_MASS_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

impl Check {
    fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, pass: value < threshold, detail: None }
    }

    fn with(mut self, detail: serde_json::Value) -> Self {
        self.detail = Some(detail);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub dimension: usize,
    pub nodes: usize,
    pub r_max: f64,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

/// Mass of the background source against `Lambda_n alpha / 2` for seeded random `alpha` in (0, 2).
fn psi_mass(p: &Prepared) -> anyhow::Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.config.ineq.seed);
    let alphas: Vec<f64> = (0..PSI_ALPHAS).map(|_| rng.gen_range(0.01..1.99)).collect();
    let mut worst = 0.0f64;
    for &a in &alphas {
        let bg = build_background(a, &p.grid)?;
        worst = worst.max((bg.psi_mass() / bg.theta_target() - 1.0).abs());
    }
    Ok(Check::below("psi_mass", worst, PSI_MASS_TOL).with(serde_json::json!({ "alphas": alphas })))
}

/// Excess against its closed form: 0 in n = 2, `t^2 / 4` in n = 4.
fn kernel_closed_form(p: &Prepared, table: &qcurv_core::KernelTable) -> Check {
    let r = p.grid.nodes();
    let n = r.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let t = r[i].min(r[j]) / r[i].max(r[j]);
            let exact = if p.dim() == 2 { 0.0 } else { 0.25 * t * t };
            worst = worst.max((table.excess(i, j) - exact).abs());
        }
    }
    Check::below("kernel_closed_form", worst, KERNEL_TOL)
}

fn green(p: &Prepared, table: &qcurv_core::KernelTable) -> anyhow::Result<Check> {
    let rho = p.grid.field_from_fn(|r| (-r * r).exp());
    let res = greens_consistency(&p.grid, &rho, table, &RadialOperator::new(&p.grid))?;
    Ok(Check::below("greens_consistency", res, GREEN_TOL))
}

/// Energy of `e^{-r^2}`: `pi` for n = 2, `6 pi^2` for n = 4.
fn energy(p: &Prepared) -> anyhow::Result<Check> {
    let pi = std::f64::consts::PI;
    let exact = if p.dim() == 2 { pi } else { 6.0 * pi * pi };
    let e = halfpower_energy(&p.grid.field_from_fn(|r| (-r * r).exp()), &p.grid)?;
    Ok(Check::below("gaussian_energy", (e / exact - 1.0).abs(), ENERGY_TOL))
}

fn mta_checks(p: &Prepared) -> anyhow::Result<Vec<Check>> {
    let ineq = &p.config.ineq;
    let dim = p.dim();
    let grid = ineq.grid.build(dim)?;
    let mut out = Vec::new();
    let identity = ineq
        .epsilons
        .iter()
        .map(|&e| (mta_coefficient(dim, e) / mta_coefficient_via_bn(dim, e) - 1.0).abs())
        .fold(0.0, f64::max);
    out.push(Check::below("mta_coefficient_identity", identity, IDENTITY_TOL));
    // at eps = 1 the weight is the round sphere density
    let (_, lhs, _) = mta_gap(&grid.zeros(), 1.0, &grid)?.ok_or_else(|| anyhow::anyhow!("weight mass overflowed"))?;
    out.push(Check::below("mta_weight_mass", (lhs - sphere_area(dim).ln()).abs(), WEIGHT_MASS_TOL));
    for &eps in &ineq.epsilons {
        let fam = TrialFamily { generator: ineq.generator, count: ineq.count, seed: ineq.seed };
        let rep = mta_scan(&fam, eps, &grid, ineq.margin)?;
        let (_, val) = fam.split();
        let val_max = rep
            .gaps
            .iter()
            .filter(|g| val.binary_search(&g.trial).is_ok())
            .map(|g| g.gap)
            .fold(f64::NEG_INFINITY, f64::max);
        let check = Check {
            name: format!("mta_scan_eps_{eps:?}"),
            value: rep.violations as f64,
            threshold: 0.0,
            pass: rep.violations == 0 && rep.rejected.is_empty(),
            detail: Some(serde_json::json!({
                "coefficient": rep.coefficient,
                "c_fit": rep.c_fit,
                "validation_max": val_max,
                "margin": rep.margin,
                "trials": ineq.count,
                "rejected": rep.rejected,
            })),
        };
        out.push(check);
    }
    Ok(out)
}

pub fn run_verify(p: &Prepared) -> anyhow::Result<VerifyReport> {
    pool(p.config.workers)?.install(|| {
        let mut checks = vec![psi_mass(p)?];
        if p.grid.len() <= p.config.kernel.max_nodes {
            let table = kernel_table(&p.grid, p.config.kernel.max_nodes)?;
            checks.push(kernel_closed_form(p, &table));
            checks.push(green(p, &table)?);
        } else {
            let cap = p.config.kernel.max_nodes as f64;
            checks.push(Check {
                name: "kernel_table".into(),
                value: p.grid.len() as f64,
                threshold: cap,
                pass: false,
                detail: None,
            });
        }
        checks.push(energy(p)?);
        checks.extend(mta_checks(p)?);
        let pass = checks.iter().all(|c| c.pass);
        Ok(VerifyReport {
            dimension: p.dim(),
            nodes: p.grid.len(),
            r_max: p.grid.r_max(),
            seed: p.config.ineq.seed,
            checks,
            pass,
        })
    })
}

/// Writes `verify.json` and returns whether every check passed.
pub fn cmd_verify(p: &Prepared) -> anyhow::Result<bool> {
    let report = run_verify(p)?;
    for c in &report.checks {
        log::info!(
            "{} {} value {:e} threshold {:e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        );
    }
    fs::write(p.out().join("verify.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report.pass)
}
