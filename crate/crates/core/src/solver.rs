//! Solvers for `(-Delta)^{n/2} v + psi = Theta K e^{nv} / int K e^{nv}` and
//! assembly of `u = u0 + v1`.
//!
//! Two independent routes: gradient descent on the functional `F` and damped
//! Picard iteration on the normal-solution representation `u = L[f e^{nu}] + c`.

use serde::{Deserialize, Serialize};

use crate::background::{
    build_background, check_admissible, epsilon, modified_curvature, relative_residual, Background, CurvatureSpec,
};
use crate::error::{QcurvError, Result};
use crate::fit::linear_fit;
use crate::grid::{weighted_mean_values, Field, RadialGrid, WeightSpec};
use crate::kernel::KernelTable;
use crate::operator::{BandedSpd, Closure, RadialOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FixedPoint,
    Minimize,
    #[default]
    Both,
}

/// Backtracking parameters for [`solve_minimize`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LineSearch {
    /// Sufficient-decrease constant.
    pub armijo: f64,
    pub shrink: f64,
    /// Factor applied to the last accepted step before the next search.
    pub grow: f64,
    pub initial_step: f64,
    pub max_step: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self { armijo: 1e-4, shrink: 0.5, grow: 2.0, initial_step: 1.0, max_step: 1.5, max_backtracks: 40 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub alpha: f64,
    pub method: Method,
    /// Picard damping `tau`.
    pub damping: f64,
    pub damping_floor: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub line_search: LineSearch,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            method: Method::Both,
            damping: 0.5,
            damping_floor: 1.0 / 64.0,
            max_iter: 20_000,
            tol: 1e-4,
            line_search: LineSearch::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(QcurvError::InvalidParameter(s));
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping {} must lie in (0, 1]", self.damping));
        }
        if !(self.damping_floor > 0.0 && self.damping_floor <= self.damping) {
            return bad(format!("damping floor {} must lie in (0, damping]", self.damping_floor));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol {} must be positive", self.tol));
        }
        let ls = &self.line_search;
        if !(ls.armijo > 0.0 && ls.armijo < 0.5 && ls.shrink > 0.0 && ls.shrink < 1.0 && ls.grow >= 1.0) {
            return bad("line search needs 0 < armijo < 0.5, 0 < shrink < 1, grow >= 1".into());
        }
        if !(ls.initial_step > 0.0 && ls.max_step >= ls.initial_step) {
            return bad("line search needs 0 < initial_step <= max_step".into());
        }
        Ok(())
    }
}

/// Everything the solvers share for one `(grid, f, alpha)`.
#[derive(Clone, Debug)]
pub struct SolverContext {
    grid: RadialGrid,
    op: RadialOperator,
    bg: Background,
    f: Field,
    k: Field,
    l: f64,
    weight: WeightSpec,
    theta: f64,
    metric: BandedSpd,
}

impl SolverContext {
    /// `l` is the decay exponent of `f`; it fixes the admissible window and the gauge weight.
    pub fn new(grid: RadialGrid, f: Field, l: f64, alpha: f64) -> Result<Self> {
        grid.check(&f)?;
        let dim = grid.dim();
        check_admissible(alpha, l, dim)?;
        if f.max() <= 0.0 {
            return Err(QcurvError::NonPositiveCurvature);
        }
        let bg = build_background(alpha, &grid)?;
        let k = modified_curvature(&f, &bg)?;
        let eps = epsilon(alpha, l, dim);
        let weight = WeightSpec::new(dim, if eps.is_finite() { eps } else { 1.0 })?;
        let h = weight.sample(&grid).into_values();
        let op = RadialOperator::new(&grid);
        let mass: Vec<f64> = grid.weights().iter().zip(&h).map(|(w, h)| w * h).collect();
        let metric = op.energy_matrix(&mass).factor();
        let theta = bg.psi_mass();
        Ok(Self { grid, op, bg, f, k, l, weight, theta, metric })
    }

    pub fn from_spec(grid: RadialGrid, spec: &CurvatureSpec, alpha: f64) -> Result<Self> {
        let f = spec.sample(&grid)?;
        Self::new(grid, f, spec.decay(), alpha)
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn operator(&self) -> &RadialOperator {
        &self.op
    }

    pub fn background(&self) -> &Background {
        &self.bg
    }

    pub fn alpha(&self) -> f64 {
        self.bg.alpha()
    }

    pub fn curvature(&self) -> &Field {
        &self.f
    }

    pub fn modified_curvature(&self) -> &Field {
        &self.k
    }

    pub fn decay(&self) -> f64 {
        self.l
    }

    pub fn weight(&self) -> WeightSpec {
        self.weight
    }

    /// Total curvature the discrete problem enforces: `integrate(psi)`.
    ///
    /// Equal to `Lambda_n alpha / 2` up to the quadrature error of `psi`; using
    /// it makes `F(v + c) = F(v)` hold exactly on the grid.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn theta_target(&self) -> f64 {
        self.bg.theta_target()
    }

    fn dim(&self) -> f64 {
        self.grid.dim() as f64
    }

    /// `log sum_i w_i K_i e^{n v_i}`, or `None` outside `H_K`.
    fn log_curvature_integral(&self, v: &[f64]) -> Option<f64> {
        log_weighted_exp_sum(self.grid.weights(), self.k.values(), v, self.dim())
    }

    fn functional_values(&self, v: &[f64]) -> Result<f64> {
        let log_int = self
            .log_curvature_integral(v)
            .ok_or_else(|| QcurvError::NotAdmissible(exp_sum(self.grid.weights(), self.k.values(), v, self.dim())))?;
        let lin: f64 =
            self.grid.integrate_values(&self.bg.psi().values().iter().zip(v).map(|(p, v)| p * v).collect::<Vec<_>>());
        Ok(0.5 * self.op.energy(v) + lin - self.theta / self.dim() * log_int)
    }

    /// Gradient as a covector (quadrature weights folded in) and the normalized density `K e^{nv} / int K e^{nv}`.
    fn covector(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.dim();
        let log_int = self
            .log_curvature_integral(v)
            .ok_or_else(|| QcurvError::NotAdmissible(exp_sum(self.grid.weights(), self.k.values(), v, n)))?;
        let rho: Vec<f64> = self
            .k
            .values()
            .iter()
            .zip(v)
            .map(|(k, v)| if *k == 0.0 { 0.0 } else { k * (n * v - log_int).exp() })
            .collect();
        let cov = self.op.energy_covector(v);
        let w = self.grid.weights();
        let psi = self.bg.psi().values();
        let g = (0..v.len()).map(|i| cov[i] + w[i] * (psi[i] - self.theta * rho[i])).collect();
        Ok((g, rho))
    }

    fn recentre(&self, v: &mut [f64]) {
        let m = weighted_mean_values(&self.grid, v, &self.weight);
        v.iter_mut().for_each(|x| *x -= m);
    }

    /// Residual of `(-Delta)^{n/2}(u0 + v) = Theta K e^{nv} / int K e^{nv}`.
    fn residual_v(&self, v: &[f64], rho: &[f64]) -> f64 {
        let pv = self.op.polyharmonic_values(v, Closure::Neumann);
        let lhs: Vec<f64> = pv.iter().zip(self.bg.psi().values()).map(|(a, b)| a + b).collect();
        let rhs: Vec<f64> = rho.iter().map(|r| self.theta * r).collect();
        relative_residual(&self.grid, &lhs, &rhs)
    }

    /// Shift `v` so that `int K e^{n v1} = Theta`.
    fn normalize(&self, v: &[f64]) -> Result<Vec<f64>> {
        let log_int = self
            .log_curvature_integral(v)
            .ok_or_else(|| QcurvError::NotAdmissible(exp_sum(self.grid.weights(), self.k.values(), v, self.dim())))?;
        let c = (self.theta.ln() - log_int) / self.dim();
        Ok(v.iter().map(|x| x + c).collect())
    }

    /// Starting point in `H_K`: zero when `int K > 0`, else a growing bump at the peak of `K`.
    pub fn initial_iterate(&self) -> Result<Vec<f64>> {
        let zero = vec![0.0; self.grid.len()];
        if self.log_curvature_integral(&zero).is_some() {
            return Ok(zero);
        }
        let r = self.grid.nodes();
        let (peak, _) =
            self.k.values().iter().enumerate().fold((0, f64::MIN), |acc, (i, &k)| if k > acc.1 { (i, k) } else { acc });
        let centre = r[peak];
        let width = 0.5 * centre.max(0.5);
        let bump: Vec<f64> = r.iter().map(|x| (-((x - centre) / width).powi(2)).exp()).collect();
        let mut scale = 1.0;
        while scale <= 64.0 {
            let v: Vec<f64> = bump.iter().map(|b| scale * b).collect();
            if self.log_curvature_integral(&v).is_some() {
                return Ok(v);
            }
            scale *= 2.0;
        }
        Err(QcurvError::NotAdmissible(exp_sum(self.grid.weights(), self.k.values(), &bump, self.dim())))
    }
}

/// `log sum w_i k_i e^{n v_i}` computed stably; `None` when the sum is not positive.
fn log_weighted_exp_sum(w: &[f64], k: &[f64], v: &[f64], n: f64) -> Option<f64> {
    let m = k.iter().zip(v).filter(|(k, _)| **k != 0.0).map(|(_, v)| n * v).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let s: f64 =
        w.iter().zip(k).zip(v).map(|((w, k), v)| if *k == 0.0 { 0.0 } else { w * k * (n * v - m).exp() }).sum();
    if s > 0.0 && s.is_finite() {
        Some(m + s.ln())
    } else {
        None
    }
}

fn exp_sum(w: &[f64], k: &[f64], v: &[f64], n: f64) -> f64 {
    w.iter().zip(k).zip(v).map(|((w, k), v)| w * k * (n * v).exp()).sum()
}

/// `F(v) = 1/2 int |(-Delta)^{n/4} v|^2 + int psi v - (Theta/n) log int K e^{nv}`.
pub fn functional_f(v: &Field, ctx: &SolverContext) -> Result<f64> {
    ctx.grid.check(v)?;
    ctx.functional_values(v.values())
}

/// Pointwise `L^2` gradient `(-Delta)^{n/2} v + psi - Theta K e^{nv} / int K e^{nv}`.
///
/// Pairing with a direction by quadrature reproduces the directional derivative of [`functional_f`].
pub fn gradient_f(v: &Field, ctx: &SolverContext) -> Result<Field> {
    ctx.grid.check(v)?;
    let (g, _) = ctx.covector(v.values())?;
    let values = g.iter().zip(ctx.grid.weights()).map(|(g, w)| g / w).collect();
    Field::new(&ctx.grid, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub residual: f64,
    #[serde(rename = "F")]
    pub f_value: f64,
    pub theta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    FixedPoint,
    Minimize,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub method: SolveMethod,
    pub dim: usize,
    pub alpha: f64,
    /// `u0 + v1`
    pub u: Field,
    pub v1: Field,
    /// `f e^{nu}`
    pub density: Field,
    /// `integrate(f e^{nu})`
    pub theta: f64,
    pub theta_target: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    /// Functional values per accepted iterate.
    pub f_history: Vec<f64>,
    /// Quadratic energy `int |(-Delta)^{n/4} v|^2` per accepted iterate.
    pub energy_history: Vec<f64>,
    pub trace: Vec<TraceRow>,
}

impl Solution {
    /// `theta / (Lambda_n alpha / 2) - 1`
    pub fn theta_error(&self) -> f64 {
        self.theta / self.theta_target - 1.0
    }
}

fn assemble(
    ctx: &SolverContext,
    method: SolveMethod,
    v: &[f64],
    iterations: usize,
    converged: bool,
    f_history: Vec<f64>,
    energy_history: Vec<f64>,
    trace: Vec<TraceRow>,
) -> Result<Solution> {
    let v1 = ctx.normalize(v)?;
    let (_, rho) = ctx.covector(&v1)?;
    let residual = ctx.residual_v(&v1, &rho);
    let n = ctx.dim();
    let u: Vec<f64> = ctx.bg.u0().values().iter().zip(&v1).map(|(a, b)| a + b).collect();
    let density: Vec<f64> =
        ctx.f.values().iter().zip(&u).map(|(f, u)| if *f == 0.0 { 0.0 } else { f * (n * u).exp() }).collect();
    let theta = ctx.grid.integrate_values(&density);
    Ok(Solution {
        method,
        dim: ctx.grid.dim(),
        alpha: ctx.alpha(),
        u: Field::new(&ctx.grid, u)?,
        v1: Field::new(&ctx.grid, v1)?,
        density: Field::new(&ctx.grid, density)?,
        theta,
        theta_target: ctx.theta_target(),
        iterations,
        converged,
        residual,
        f_history,
        energy_history,
        trace,
    })
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn sup(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Gradient descent on `F` in the metric of the quadratic energy (plus an
/// `h`-weighted mass term), with Armijo backtracking and re-centring after
/// every step.
pub fn solve_minimize(ctx: &SolverContext, cfg: &SolverConfig) -> Result<Solution> {
    solve_minimize_from(ctx, cfg, ctx.initial_iterate()?)
}

/// As [`solve_minimize`] from a caller-supplied start, which must lie in `H_K`.
pub fn solve_minimize_from(ctx: &SolverContext, cfg: &SolverConfig, start: Vec<f64>) -> Result<Solution> {
    cfg.validate()?;
    if start.len() != ctx.grid.len() {
        return Err(QcurvError::LengthMismatch { len: start.len(), expected: ctx.grid.len() });
    }
    let ls = cfg.line_search;
    let mut v = start;
    ctx.recentre(&mut v);
    let mut f_val = ctx.functional_values(&v)?;
    let mut f_history = vec![f_val];
    let mut energy_history = vec![ctx.op.energy(&v)];
    let mut trace = Vec::new();
    let mut step = ls.initial_step;
    let mut change = f64::INFINITY;
    let mut converged = false;
    let mut iter = 0;
    while iter < cfg.max_iter {
        let (g, rho) = ctx.covector(&v)?;
        let d = ctx.metric.solve(&g);
        let slope: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        let residual = ctx.residual_v(&v, &rho);
        trace.push(TraceRow { iter, residual, f_value: f_val, theta: ctx.theta });
        let scale = sup(&v).max(1.0);
        if sup(&d) / scale < cfg.tol && change < cfg.tol && residual < cfg.tol {
            converged = true;
            break;
        }
        if slope <= 0.0 {
            // already stationary to rounding
            converged = residual < cfg.tol;
            break;
        }
        let mut accepted = None;
        for _ in 0..ls.max_backtracks {
            let mut trial: Vec<f64> = v.iter().zip(&d).map(|(x, y)| x - step * y).collect();
            ctx.recentre(&mut trial);
            if let Ok(ft) = ctx.functional_values(&trial) {
                if ft <= f_val - ls.armijo * step * slope {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            step *= ls.shrink;
        }
        let Some((next, f_next)) = accepted else {
            // Armijo fails only when the decrease is below rounding of F.
            let residual = ctx.residual_v(&v, &rho);
            if residual < cfg.tol {
                converged = true;
                break;
            }
            return Err(QcurvError::LineSearchFailed(ls.max_backtracks));
        };
        change = sup_diff(&next, &v) / sup(&next).max(1.0);
        v = next;
        f_val = f_next;
        f_history.push(f_val);
        energy_history.push(ctx.op.energy(&v));
        step = (step * ls.grow).min(ls.max_step);
        iter += 1;
    }
    if !converged {
        log::warn!("minimize stopped after {iter} iterations without meeting tol {}", cfg.tol);
    }
    assemble(ctx, SolveMethod::Minimize, &v, iter, converged, f_history, energy_history, trace)
}

/// Damped Picard iteration `u <- (1 - tau) u + tau L[f e^{nu}] + c` with
/// `c` fixing `int f e^{nu} = Theta`.
pub fn solve_fixed_point(ctx: &SolverContext, table: &KernelTable, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    if table.grid_id() != ctx.grid.id() {
        return Err(QcurvError::GridMismatch);
    }
    let v0 = ctx.normalize(&ctx.initial_iterate()?)?;
    solve_fixed_point_from(ctx, table, cfg, v0)
}

/// As [`solve_fixed_point`] from `v = u - u0`.
pub fn solve_fixed_point_from(
    ctx: &SolverContext,
    table: &KernelTable,
    cfg: &SolverConfig,
    start: Vec<f64>,
) -> Result<Solution> {
    cfg.validate()?;
    if table.grid_id() != ctx.grid.id() {
        return Err(QcurvError::GridMismatch);
    }
    if start.len() != ctx.grid.len() {
        return Err(QcurvError::LengthMismatch { len: start.len(), expected: ctx.grid.len() });
    }
    let n = ctx.dim();
    let u0 = ctx.bg.u0().values();
    let mut v = ctx.normalize(&start)?;
    let mut tau = cfg.damping;
    let mut f_history = Vec::new();
    let mut energy_history = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iter = 0;
    let mut change = f64::INFINITY;
    while iter < cfg.max_iter {
        // v is normalized, so K e^{nv} is already f e^{nu} with mass Theta.
        let rho: Vec<f64> =
            ctx.k.values().iter().zip(&v).map(|(k, v)| if *k == 0.0 { 0.0 } else { k * (n * v).exp() }).collect();
        let pot = table.potential_values(&ctx.grid, &rho);
        // target for v: L[rho] - u0
        let target: Vec<f64> = pot.iter().zip(u0).map(|(p, u)| p - u).collect();
        let gap: Vec<f64> = target.iter().zip(&v).map(|(t, v)| t - v).collect();
        let interior = ctx.grid.interior();
        let osc = gap[interior.clone()].iter().cloned().fold(f64::MIN, f64::max)
            - gap[interior].iter().cloned().fold(f64::MAX, f64::min);
        let f_val = ctx.functional_values(&v)?;
        let residual = ctx.residual_v(&v, &rho.iter().map(|r| r / ctx.theta).collect::<Vec<_>>());
        f_history.push(f_val);
        energy_history.push(ctx.op.energy(&v));
        trace.push(TraceRow { iter, residual, f_value: f_val, theta: ctx.theta });
        if osc < cfg.tol && change < cfg.tol && residual < cfg.tol {
            converged = true;
            break;
        }
        let next = loop {
            let trial: Vec<f64> = v.iter().zip(&target).map(|(v, t)| (1.0 - tau) * v + tau * t).collect();
            match ctx.normalize(&trial) {
                Ok(t) => break t,
                Err(_) if tau * 0.5 >= cfg.damping_floor => tau *= 0.5,
                Err(_) => return Err(QcurvError::DampingExhausted(cfg.damping_floor)),
            }
        };
        change = sup_diff(&next, &v) / sup(&next).max(1.0);
        v = next;
        iter += 1;
    }
    if !converged {
        log::warn!("fixed point stopped after {iter} iterations without meeting tol {}", cfg.tol);
    }
    assemble(ctx, SolveMethod::FixedPoint, &v, iter, converged, f_history, energy_history, trace)
}

/// Result of a configured solve: one or two solutions and, for two, their agreement.
#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub solutions: Vec<Solution>,
    /// `sup |(u_fp - u_min) - mean gap|` over interior nodes.
    pub disagreement: Option<f64>,
    /// Whether the two methods agree within `5 tol`; `true` for single-method runs.
    pub agree: bool,
}

impl SolveOutcome {
    pub fn converged(&self) -> bool {
        self.solutions.iter().all(|s| s.converged)
    }

    /// The minimize solution when present, else the first.
    pub fn primary(&self) -> &Solution {
        self.solutions.iter().find(|s| s.method == SolveMethod::Minimize).unwrap_or(&self.solutions[0])
    }
}

/// Runs the configured method(s). `table` is needed for the fixed point.
pub fn solve(ctx: &SolverContext, cfg: &SolverConfig, table: Option<&KernelTable>) -> Result<SolveOutcome> {
    let need_table =
        || table.ok_or_else(|| QcurvError::InvalidParameter("fixed-point method needs a kernel table".into()));
    match cfg.method {
        Method::Minimize => {
            Ok(SolveOutcome { solutions: vec![solve_minimize(ctx, cfg)?], disagreement: None, agree: true })
        }
        Method::FixedPoint => Ok(SolveOutcome {
            solutions: vec![solve_fixed_point(ctx, need_table()?, cfg)?],
            disagreement: None,
            agree: true,
        }),
        Method::Both => {
            let fp = solve_fixed_point(ctx, need_table()?, cfg)?;
            let mn = solve_minimize(ctx, cfg)?;
            let gap = method_gap(ctx.grid(), &fp.u, &mn.u)?;
            let agree = gap < 5.0 * cfg.tol;
            if !agree {
                log::warn!("methods disagree: sup gap {gap:e} exceeds {:e}", 5.0 * cfg.tol);
            }
            Ok(SolveOutcome { solutions: vec![fp, mn], disagreement: Some(gap), agree })
        }
    }
}

/// `sup |(a - b) - mean(a - b)|` over interior nodes (plain mean over the same nodes).
pub fn method_gap(grid: &RadialGrid, a: &Field, b: &Field) -> Result<f64> {
    grid.check(a)?;
    grid.check(b)?;
    let idx = grid.interior();
    let d: Vec<f64> = idx.clone().map(|i| a[i] - b[i]).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    Ok(d.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max))
}

/// Exponent `p` of `int_{B_R} |u| dx ~ R^p`, fitted over the outer two decades.
pub fn growth_check(u: &Field, grid: &RadialGrid) -> Result<f64> {
    let abs = u.map(f64::abs);
    let cum = grid.ball_integrals(&abs)?;
    let r = grid.nodes();
    let lo = grid.r_max() / 100.0;
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        r.iter().zip(&cum).filter(|(r, c)| **r >= lo && **c > 0.0).map(|(r, c)| (r.ln(), c.ln())).unzip();
    if xs.len() < 2 {
        return Err(QcurvError::InvalidGrid("too few nodes in the outer two decades".into()));
    }
    Ok(linear_fit(&xs, &ys).0)
}
