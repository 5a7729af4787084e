//! Radial discretization of R^n.
//!
//! A [`RadialGrid`] holds strictly increasing radii `r_0 < ... < r_{N-1} = R_max`
//! (no node at the origin) together with quadrature weights such that
//! `sum_i w_i phi(r_i)` approximates the n-dimensional integral of the radial
//! function `phi(|x|)` over the ball of radius `R_max`.
//!
//! Nodes are uniform in a stretched coordinate `xi`. The weights are the
//! composite trapezoid rule in `xi` for `|S^{n-1}| phi(r) r^{n-1} r'(xi)`,
//! plus a cap `|S^{n-1}| phi(r_0) r_0^n / n` covering `[0, r_0]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{QcurvError, Result};

/// Dimensions supported by the radial solver.
pub const SUPPORTED_DIMS: [usize; 2] = [2, 4];

/// Minimum node count accepted by [`RadialGrid::new`].
pub const MIN_NODES: usize = 16;

/// Surface area of the unit sphere `S^k` embedded in `R^{k+1}`.
pub fn sphere_area(k: usize) -> f64 {
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (k as f64 - 1.0) * sphere_area(k - 2),
    }
}

/// `(n-1)! |S^n|`: total Q-curvature of the round sphere. 4pi for n = 2, 16pi^2 for n = 4.
pub fn lambda_n(dim: usize) -> f64 {
    let fact: f64 = (1..dim).map(|k| k as f64).product();
    fact * sphere_area(dim)
}

/// Lebesgue volume of the unit ball in `R^n`.
pub fn unit_ball_volume(dim: usize) -> f64 {
    sphere_area(dim - 1) / dim as f64
}

pub fn check_dimension(dim: usize) -> Result<()> {
    if SUPPORTED_DIMS.contains(&dim) {
        Ok(())
    } else {
        Err(QcurvError::InvalidDimension(dim))
    }
}

/// Node grading. Both variants cluster nodes near the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stretch {
    /// `r = r_min e^xi`: geometric spacing from `r_min` to `R_max`.
    Geometric { r_min: f64 },
    /// `r = scale sinh(xi)`: uniform spacing below `scale`, geometric above it.
    Sinh { scale: f64 },
}

impl Default for Stretch {
    fn default() -> Self {
        Stretch::Sinh { scale: 0.1 }
    }
}

impl Stretch {
    fn radius(&self, xi: f64) -> f64 {
        match *self {
            Stretch::Geometric { r_min } => r_min * xi.exp(),
            Stretch::Sinh { scale } => scale * xi.sinh(),
        }
    }

    fn jacobian(&self, xi: f64) -> f64 {
        match *self {
            Stretch::Geometric { r_min } => r_min * xi.exp(),
            Stretch::Sinh { scale } => scale * xi.cosh(),
        }
    }

    /// Stretched coordinates of the nodes and their spacing.
    fn coordinates(&self, n_nodes: usize, r_max: f64) -> Result<(Vec<f64>, f64)> {
        match *self {
            Stretch::Geometric { r_min } => {
                if !(r_min > 0.0 && r_min < r_max) {
                    return Err(QcurvError::InvalidGrid(format!(
                        "geometric grading needs 0 < r_min < R_max (r_min = {r_min})"
                    )));
                }
                let dxi = (r_max / r_min).ln() / (n_nodes - 1) as f64;
                Ok(((0..n_nodes).map(|i| i as f64 * dxi).collect(), dxi))
            }
            Stretch::Sinh { scale } => {
                if !(scale > 0.0 && scale.is_finite()) {
                    return Err(QcurvError::InvalidGrid(format!("sinh grading needs a positive scale (got {scale})")));
                }
                // cell-centred: xi_0 = dxi / 2, xi_{N-1} = asinh(R_max / scale)
                let dxi = (r_max / scale).asinh() / (n_nodes as f64 - 0.5);
                Ok(((0..n_nodes).map(|i| (i as f64 + 0.5) * dxi).collect(), dxi))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct RadialGrid {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `r'(xi_i) * dxi`, the local node spacing.
    spacing: Vec<f64>,
    r_max: f64,
    stretch: Stretch,
    id: u64,
}

/// Builds a graded radial grid; see [`RadialGrid::new`].
pub fn make_radial_grid(dim: usize, n_nodes: usize, r_max: f64, stretch: Stretch) -> Result<RadialGrid> {
    RadialGrid::new(dim, n_nodes, r_max, stretch)
}

impl RadialGrid {
    pub fn new(dim: usize, n_nodes: usize, r_max: f64, stretch: Stretch) -> Result<Self> {
        check_dimension(dim)?;
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(QcurvError::InvalidGrid(format!("R_max must be positive (got {r_max})")));
        }
        if r_max <= 1.0 {
            return Err(QcurvError::InvalidGrid(format!("R_max must exceed 1 (got {r_max})")));
        }
        if n_nodes < MIN_NODES {
            return Err(QcurvError::InvalidGrid(format!("need at least {MIN_NODES} nodes (got {n_nodes})")));
        }

        let (xi, dxi) = stretch.coordinates(n_nodes, r_max)?;
        let mut nodes: Vec<f64> = xi.iter().map(|&x| stretch.radius(x)).collect();
        nodes[n_nodes - 1] = r_max;
        if nodes.windows(2).any(|w| w[1] <= w[0]) || nodes[0] <= 0.0 {
            return Err(QcurvError::InvalidGrid("nodes are not strictly increasing".into()));
        }

        let area = sphere_area(dim - 1);
        let spacing: Vec<f64> = xi.iter().map(|&x| stretch.jacobian(x) * dxi).collect();
        let mut weights: Vec<f64> =
            nodes.iter().zip(&spacing).map(|(&r, &dr)| area * r.powi(dim as i32 - 1) * dr).collect();
        weights[0] *= 0.5;
        weights[n_nodes - 1] *= 0.5;
        weights[0] += area * nodes[0].powi(dim as i32) / dim as f64;

        let id = fingerprint(dim, &nodes);
        Ok(Self { dim, nodes, weights, spacing, r_max, stretch, id })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn stretch(&self) -> Stretch {
        self.stretch
    }

    /// Fingerprint of `(dim, nodes)`; fields carry it to detect grid mismatches.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// `|S^{n-1}|`, the angular measure of the radial reduction.
    pub fn sphere_area(&self) -> f64 {
        sphere_area(self.dim - 1)
    }

    /// Node indices away from both boundary closures.
    pub fn interior(&self) -> std::ops::Range<usize> {
        let pad = self.dim + 1;
        pad..self.len() - pad
    }

    pub fn field_from_fn(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid_id: self.id, values: self.nodes.iter().map(|&r| f(r)).collect() }
    }

    pub fn constant(&self, c: f64) -> Field {
        Field { grid_id: self.id, values: vec![c; self.len()] }
    }

    pub fn zeros(&self) -> Field {
        self.constant(0.0)
    }

    pub fn check(&self, field: &Field) -> Result<()> {
        if field.values.len() != self.len() {
            return Err(QcurvError::LengthMismatch { len: field.values.len(), expected: self.len() });
        }
        if field.grid_id != self.id {
            return Err(QcurvError::GridMismatch);
        }
        Ok(())
    }

    /// `sum_i w_i phi(r_i)`.
    pub fn integrate(&self, phi: &Field) -> Result<f64> {
        self.check(phi)?;
        Ok(self.integrate_values(&phi.values))
    }

    pub(crate) fn integrate_values(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Cumulative ball integrals `int_{B_{r_i}} phi dx` under the same rule as
    /// [`integrate`](Self::integrate); the last entry equals `integrate(phi)`.
    pub fn ball_integrals(&self, phi: &Field) -> Result<Vec<f64>> {
        self.check(phi)?;
        let area = self.sphere_area();
        let n = self.dim as i32;
        let density: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.spacing)
            .zip(&phi.values)
            .map(|((&r, &dr), &v)| area * r.powi(n - 1) * dr * v)
            .collect();
        let mut acc = area * self.nodes[0].powi(n) / n as f64 * phi.values[0];
        let mut out = Vec::with_capacity(self.len());
        out.push(acc);
        for i in 1..self.len() {
            acc += 0.5 * (density[i - 1] + density[i]);
            out.push(acc);
        }
        Ok(out)
    }

    /// Value at `r = 0` from the even extension `phi(r) ~ a + b r^2` through the first two nodes.
    pub fn value_at_origin(&self, phi: &Field) -> Result<f64> {
        self.check(phi)?;
        let (r0, r1) = (self.nodes[0], self.nodes[1]);
        let (p0, p1) = (phi.values[0], phi.values[1]);
        Ok((r1 * r1 * p0 - r0 * r0 * p1) / (r1 * r1 - r0 * r0))
    }
}

fn fingerprint(dim: usize, nodes: &[f64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update((dim as u64).to_le_bytes());
    for r in nodes {
        hasher.update(r.to_bits().to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

/// A radial function sampled at the nodes of one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    grid_id: u64,
    values: Vec<f64>,
}

impl Field {
    /// Wraps sampled values, rejecting wrong lengths and non-finite entries.
    pub fn new(grid: &RadialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(QcurvError::LengthMismatch { len: values.len(), expected: grid.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(QcurvError::NonFinite(i));
        }
        Ok(Self { grid_id: grid.id(), values })
    }

    pub(crate) fn from_raw(grid_id: u64, values: Vec<f64>) -> Self {
        Self { grid_id, values }
    }

    pub fn grid_id(&self) -> u64 {
        self.grid_id
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid_id: self.grid_id, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        if self.grid_id != other.grid_id || self.len() != other.len() {
            return Err(QcurvError::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Field { grid_id: self.grid_id, values })
    }

    pub fn shifted(&self, c: f64) -> Field {
        self.map(|v| v + c)
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| v * c)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl std::ops::Index<usize> for Field {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// The weight `h(r) = (1 + r^2)^{-n/2 - n eps/2}` defining `d mu = h dx`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub dim: usize,
    pub epsilon: f64,
}

impl WeightSpec {
    pub fn new(dim: usize, epsilon: f64) -> Result<Self> {
        check_dimension(dim)?;
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(QcurvError::InvalidParameter(format!("epsilon must be positive (got {epsilon})")));
        }
        Ok(Self { dim, epsilon })
    }

    fn exponent(&self) -> f64 {
        let n = self.dim as f64;
        -0.5 * n - 0.5 * n * self.epsilon
    }

    pub fn value(&self, r: f64) -> f64 {
        (1.0 + r * r).powf(self.exponent())
    }

    pub fn sample(&self, grid: &RadialGrid) -> Field {
        grid.field_from_fn(|r| self.value(r))
    }

    /// `C` with `C^{-1} r^{-n-n eps} <= h(r) <= C r^{-n-n eps}` for `r >= 1`.
    pub fn bound_constant(&self) -> f64 {
        2f64.powf(-self.exponent())
    }
}

/// `int u h dx / int h dx`.
pub fn weighted_mean(grid: &RadialGrid, u: &Field, weight: &WeightSpec) -> Result<f64> {
    grid.check(u)?;
    Ok(weighted_mean_values(grid, u.values(), weight))
}

pub(crate) fn weighted_mean_values(grid: &RadialGrid, u: &[f64], weight: &WeightSpec) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&w, &r), &v) in grid.weights.iter().zip(&grid.nodes).zip(u) {
        let h = w * weight.value(r);
        num += h * v;
        den += h;
    }
    num / den
}
