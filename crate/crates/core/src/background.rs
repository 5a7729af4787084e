//! Logarithmic background `u0`, its polyharmonic image `psi`, the modified
//! curvature `K = f e^{n u0}` and the prescribed-curvature presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{QcurvError, Result};
use crate::grid::{check_dimension, lambda_n, Field, RadialGrid};
use crate::operator::{Closure, RadialOperator};

/// Smooth transition of `u0 = -alpha B(r) log r` between `inner` and `outer`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub inner: f64,
    pub outer: f64,
}

impl Default for Cutoff {
    fn default() -> Self {
        Self { inner: 0.25, outer: 0.5 }
    }
}

impl Cutoff {
    /// Quintic smoothstep in `log r`: 0 below `inner`, 1 above `outer`, C^2 joins.
    pub fn blend(&self, r: f64) -> f64 {
        let x = ((r / self.inner).ln() / (self.outer / self.inner).ln()).clamp(0.0, 1.0);
        x * x * x * (x * (6.0 * x - 15.0) + 10.0)
    }
}

#[derive(Clone, Debug)]
pub struct Background {
    alpha: f64,
    dim: usize,
    cutoff: Cutoff,
    u0: Field,
    psi: Field,
    psi_mass: f64,
}

impl Background {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cutoff(&self) -> Cutoff {
        self.cutoff
    }

    pub fn u0(&self) -> &Field {
        &self.u0
    }

    pub fn psi(&self) -> &Field {
        &self.psi
    }

    /// `integrate(psi)` on the grid.
    pub fn psi_mass(&self) -> f64 {
        self.psi_mass
    }

    /// `Lambda_n alpha / 2`
    pub fn theta_target(&self) -> f64 {
        lambda_n(self.dim) * self.alpha / 2.0
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(QcurvError::AlphaOutOfRange { alpha, lo: 0.0, hi: 2.0 });
    }
    Ok(())
}

pub fn build_background(alpha: f64, grid: &RadialGrid) -> Result<Background> {
    build_background_with(alpha, grid, Cutoff::default())
}

pub fn build_background_with(alpha: f64, grid: &RadialGrid, cutoff: Cutoff) -> Result<Background> {
    check_alpha(alpha)?;
    if !(cutoff.inner > 0.0 && cutoff.outer > cutoff.inner && cutoff.outer < grid.r_max()) {
        return Err(QcurvError::InvalidParameter(format!("cutoff {cutoff:?}")));
    }
    let u0 = grid.field_from_fn(|r| -alpha * cutoff.blend(r) * r.ln());
    let psi = polyharmonic(&u0, grid)?;
    let psi_mass = grid.integrate(&psi)?;
    Ok(Background { alpha, dim: grid.dim(), cutoff, u0, psi, psi_mass })
}

/// Discrete `(-Delta)^{n/2} u` with the extrapolated outer closure.
pub fn polyharmonic(u: &Field, grid: &RadialGrid) -> Result<Field> {
    RadialOperator::new(grid).polyharmonic(u, Closure::Extrapolated)
}

/// `K = f e^{n u0}`.
pub fn modified_curvature(f: &Field, bg: &Background) -> Result<Field> {
    let n = bg.dim as f64;
    f.zip_with(&bg.u0, |f, u| if f == 0.0 { 0.0 } else { f * (n * u).exp() })
}

/// `(max{0, 2 - 2l/n}, 2)`
pub fn admissible_alpha_range(l: f64, dim: usize) -> Result<(f64, f64)> {
    check_dimension(dim)?;
    if !(l > 0.0) {
        return Err(QcurvError::InvalidDecay(l));
    }
    Ok(((2.0 - 2.0 * l / dim as f64).max(0.0), 2.0))
}

/// `epsilon = alpha + l/n - 1`, positive exactly inside the admissible window.
pub fn epsilon(alpha: f64, l: f64, dim: usize) -> f64 {
    alpha + l / dim as f64 - 1.0
}

/// Checks `alpha` against the window for decay `l`.
pub fn check_admissible(alpha: f64, l: f64, dim: usize) -> Result<()> {
    let (lo, hi) = admissible_alpha_range(l, dim)?;
    if !(alpha > lo && alpha < hi) {
        return Err(QcurvError::AlphaOutOfRange { alpha, lo, hi });
    }
    Ok(())
}

/// Prescribed curvature `f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurvatureSpec {
    /// `f = value`
    Constant { value: f64 },
    /// `f = (1 + r^2)^{-l/2}`
    PowerDecay { l: f64 },
    /// `f = exp(-(r/width)^2)`; decays faster than any power.
    Gaussian { width: f64 },
    /// `f = (1 - depth exp(-4 (r - 2)^2)) (1 + r^2)^{-l/2}`: positive near 0, negative on an annulus around r = 2 when depth > 1.
    SignChanging { l: f64, depth: f64 },
    /// Samples `(r, f)` with a power-law tail `r^{-l}` past the last sample.
    Tabulated { r: Vec<f64>, f: Vec<f64>, l: f64 },
}

impl CurvatureSpec {
    /// Decay exponent `l` with `f = O(r^{-l})`; infinite for the Gaussian.
    pub fn decay(&self) -> f64 {
        match self {
            CurvatureSpec::Constant { .. } => 0.0,
            CurvatureSpec::PowerDecay { l }
            | CurvatureSpec::SignChanging { l, .. }
            | CurvatureSpec::Tabulated { l, .. } => *l,
            CurvatureSpec::Gaussian { .. } => f64::INFINITY,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(QcurvError::InvalidParameter(what.to_string()));
        match self {
            CurvatureSpec::Constant { value } if !value.is_finite() => bad("constant curvature must be finite"),
            CurvatureSpec::PowerDecay { l } if !(*l > 0.0 && l.is_finite()) => Err(QcurvError::InvalidDecay(*l)),
            CurvatureSpec::Gaussian { width } if !(*width > 0.0 && width.is_finite()) => {
                bad("gaussian width must be positive")
            }
            CurvatureSpec::SignChanging { l, depth } => {
                if !(*l > 0.0 && l.is_finite()) {
                    Err(QcurvError::InvalidDecay(*l))
                } else if !depth.is_finite() {
                    bad("sign-changing depth must be finite")
                } else {
                    Ok(())
                }
            }
            CurvatureSpec::Tabulated { r, f, l } => {
                if !(*l > 0.0 && l.is_finite()) {
                    return Err(QcurvError::InvalidDecay(*l));
                }
                if r.len() != f.len() || r.len() < 2 {
                    return bad("tabulated curvature needs at least two (r, f) pairs of equal length");
                }
                if r[0] < 0.0 || r.windows(2).any(|w| !(w[1] > w[0])) {
                    return bad("tabulated radii must be non-negative and strictly increasing");
                }
                if r.iter().chain(f).any(|v| !v.is_finite()) {
                    return bad("tabulated curvature has non-finite entries");
                }
                if r[r.len() - 1] <= 0.0 {
                    return bad("tabulated radii must extend past 0");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Samples `f` on the grid.
    pub fn sample(&self, grid: &RadialGrid) -> Result<Field> {
        self.validate()?;
        let values: Vec<f64> = match self {
            CurvatureSpec::Constant { value } => vec![*value; grid.len()],
            CurvatureSpec::PowerDecay { l } => grid.nodes().iter().map(|r| (1.0 + r * r).powf(-l / 2.0)).collect(),
            CurvatureSpec::Gaussian { width } => grid.nodes().iter().map(|r| (-(r / width).powi(2)).exp()).collect(),
            CurvatureSpec::SignChanging { l, depth } => grid
                .nodes()
                .iter()
                .map(|r| (1.0 - depth * (-4.0 * (r - 2.0).powi(2)).exp()) * (1.0 + r * r).powf(-l / 2.0))
                .collect(),
            CurvatureSpec::Tabulated { r, f, l } => {
                let interp = Pchip::new(r, f);
                let (r_last, f_last) = (r[r.len() - 1], f[f.len() - 1]);
                grid.nodes()
                    .iter()
                    .map(|&x| if x <= r_last { interp.eval(x) } else { f_last * (x / r_last).powf(-l) })
                    .collect()
            }
        };
        Field::new(grid, values)
    }

    /// Reads a two-column `r,f` CSV (optional header line, `#` comments).
    pub fn from_csv(path: &Path, l: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut r = Vec::new();
        let mut f = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (a, b) = match (cols.next(), cols.next()) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(QcurvError::InvalidParameter(format!(
                        "{}:{}: expected two columns",
                        path.display(),
                        lineno + 1
                    )))
                }
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => {
                    r.push(x);
                    f.push(y);
                }
                _ if r.is_empty() => continue, // header
                _ => {
                    return Err(QcurvError::InvalidParameter(format!(
                        "{}:{}: cannot parse numbers",
                        path.display(),
                        lineno + 1
                    )))
                }
            }
        }
        let spec = CurvatureSpec::Tabulated { r, f, l };
        spec.validate()?;
        Ok(spec)
    }
}

/// Monotone piecewise cubic Hermite interpolant (Fritsch–Carlson slopes).
#[derive(Clone, Debug)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        assert!(n >= 2 && y.len() == n);
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Self { x: x.to_vec(), y: y.to_vec(), d }
    }

    /// Constant extrapolation outside the sample range.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let k = self.x.partition_point(|&v| v <= t) - 1;
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Weighted relative residual `sup r^n |a - b| / sup r^n |b|` over interior nodes.
pub fn relative_residual(grid: &RadialGrid, a: &[f64], b: &[f64]) -> f64 {
    let n = grid.dim() as i32;
    let r = grid.nodes();
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in grid.interior() {
        let w = r[i].powi(n);
        err = err.max(w * (a[i] - b[i]).abs());
        scale = scale.max(w * b[i].abs());
    }
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}
