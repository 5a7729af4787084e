//! Finite-volume radial Laplacian and its powers.
//!
//! The flux through the sphere between nodes `i` and `i+1` is
//! `m_{i+1/2} (u_{i+1} - u_i)` with `m_{i+1/2} = (r_i r_{i+1})^{(n-2)/2} / log(r_{i+1}/r_i)`,
//! which reproduces the exact flux of `log r` on every face. Cell measures are
//! the grid weights divided by `|S^{n-1}|`, so `sum_i w_i (Delta u)_i` telescopes
//! to the outer boundary flux. The inner face at the origin carries no flux.

use crate::error::Result;
use crate::grid::{Field, RadialGrid};

/// Treatment of the flux through the outer sphere `r = R_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Closure {
    /// Zero flux. Makes the operator self-adjoint for the quadrature inner product.
    Neumann,
    /// Flux from a one-sided quadratic fit in `log r` through the last three nodes.
    Extrapolated,
}

#[derive(Clone, Debug)]
pub struct RadialOperator {
    dim: usize,
    grid_id: u64,
    coupling: Vec<f64>,
    volume: Vec<f64>,
    area: f64,
    outer_face: f64,
    outer_stencil: [f64; 3],
    /// Quadratic extrapolation in `log r` from nodes N-2, N-3, N-4 to node N-1.
    outer_extrapolation: [f64; 3],
}

impl RadialOperator {
    pub fn new(grid: &RadialGrid) -> Self {
        let dim = grid.dim();
        let r = grid.nodes();
        let n = r.len();
        let half = (dim as f64 - 2.0) / 2.0;
        let coupling = r.windows(2).map(|w| (w[0] * w[1]).powf(half) / (w[1] / w[0]).ln()).collect();
        let area = grid.sphere_area();
        let volume = grid.weights().iter().map(|w| w / area).collect();

        let x0 = r[n - 1].ln();
        let x1 = r[n - 2].ln();
        let x2 = r[n - 3].ln();
        let outer_stencil = [
            1.0 / (x0 - x1) + 1.0 / (x0 - x2),
            (x0 - x2) / ((x1 - x0) * (x1 - x2)),
            (x0 - x1) / ((x2 - x0) * (x2 - x1)),
        ];
        let y = [r[n - 2].ln(), r[n - 3].ln(), r[n - 4].ln()];
        let outer_extrapolation = [
            (x0 - y[1]) * (x0 - y[2]) / ((y[0] - y[1]) * (y[0] - y[2])),
            (x0 - y[0]) * (x0 - y[2]) / ((y[1] - y[0]) * (y[1] - y[2])),
            (x0 - y[0]) * (x0 - y[1]) / ((y[2] - y[0]) * (y[2] - y[1])),
        ];
        Self {
            dim,
            grid_id: grid.id(),
            coupling,
            volume,
            area,
            outer_face: r[n - 1].powf(2.0 * half),
            outer_stencil,
            outer_extrapolation,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.volume.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volume.is_empty()
    }

    fn outer_flux(&self, u: &[f64], closure: Closure) -> f64 {
        match closure {
            Closure::Neumann => 0.0,
            Closure::Extrapolated => {
                let n = u.len();
                let [a, b, c] = self.outer_stencil;
                self.outer_face * (a * u[n - 1] + b * u[n - 2] + c * u[n - 3])
            }
        }
    }

    /// Discrete Laplacian as cell averages. Under the extrapolated closure the
    /// half cell at `R_max` is replaced by extrapolation from the full cells.
    pub fn laplacian(&self, u: &[f64], closure: Closure) -> Vec<f64> {
        let n = u.len();
        debug_assert_eq!(n, self.len());
        let mut out = vec![0.0; n];
        let mut inflow = 0.0;
        for i in 0..n {
            let outflow = if i + 1 < n { self.coupling[i] * (u[i + 1] - u[i]) } else { self.outer_flux(u, closure) };
            out[i] = (outflow - inflow) / self.volume[i];
            inflow = outflow;
        }
        if closure == Closure::Extrapolated {
            let [a, b, c] = self.outer_extrapolation;
            out[n - 1] = a * out[n - 2] + b * out[n - 3] + c * out[n - 4];
        }
        out
    }

    /// `(-Delta)^{n/2} u` with the same closure at every level.
    pub fn polyharmonic_values(&self, u: &[f64], closure: Closure) -> Vec<f64> {
        match self.dim {
            2 => self.laplacian(u, closure).into_iter().map(|v| -v).collect(),
            _ => {
                let mut w = u.to_vec();
                for _ in 0..self.dim / 2 {
                    w = self.laplacian(&w, closure);
                }
                if (self.dim / 2) % 2 == 1 {
                    w.iter_mut().for_each(|v| *v = -*v);
                }
                w
            }
        }
    }

    pub fn polyharmonic(&self, u: &Field, closure: Closure) -> Result<Field> {
        if u.grid_id() != self.grid_id || u.len() != self.len() {
            return Err(crate::error::QcurvError::GridMismatch);
        }
        Ok(Field::from_raw(self.grid_id, self.polyharmonic_values(u.values(), closure)))
    }

    /// `S u` where `-Delta u = V^{-1} S u` under the Neumann closure.
    fn stiffness(&self, u: &[f64]) -> Vec<f64> {
        let n = u.len();
        let mut out = vec![0.0; n];
        for i in 0..n - 1 {
            let flux = self.coupling[i] * (u[i + 1] - u[i]);
            out[i] -= flux;
            out[i + 1] += flux;
        }
        out
    }

    /// Quadrature weights times `(-Delta)^{n/2} u` (Neumann closure), evaluated
    /// without forming the pointwise field. This is the gradient of
    /// [`energy`](Self::energy)`/2` as a covector.
    pub fn energy_covector(&self, u: &[f64]) -> Vec<f64> {
        let su = self.stiffness(u);
        let out = if self.dim == 2 {
            su
        } else {
            let scaled: Vec<f64> = su.iter().zip(&self.volume).map(|(s, v)| s / v).collect();
            self.stiffness(&scaled)
        };
        out.into_iter().map(|v| v * self.area).collect()
    }

    /// Discrete `int |(-Delta)^{n/4} u|^2 dx`: `int |grad u|^2` for n = 2, `int (Delta u)^2` for n = 4.
    pub fn energy(&self, u: &[f64]) -> f64 {
        if self.dim == 2 {
            let s: f64 = self.coupling.iter().zip(u.windows(2)).map(|(m, w)| m * (w[1] - w[0]).powi(2)).sum();
            self.area * s
        } else {
            let su = self.stiffness(u);
            let s: f64 = su.iter().zip(&self.volume).map(|(s, v)| s * s / v).sum();
            self.area * s
        }
    }

    /// Banded symmetric matrix of the energy covector map plus `diag(extra)`.
    pub(crate) fn energy_matrix(&self, extra: &[f64]) -> BandedSpd {
        let n = self.len();
        let m = &self.coupling;
        let mut tri = vec![[0.0f64; 2]; n];
        for i in 0..n {
            let left = if i > 0 { m[i - 1] } else { 0.0 };
            let right = if i + 1 < n { m[i] } else { 0.0 };
            tri[i][0] = left + right;
            tri[i][1] = if i + 1 < n { -m[i] } else { 0.0 };
        }
        if self.dim == 2 {
            let band = (0..n).map(|i| vec![self.area * tri[i][0] + extra[i], self.area * tri[i][1]]).collect();
            return BandedSpd::new(band, 1);
        }
        // (S V^{-1} S)_{i,i+d} = sum_k S_{ik} S_{k,i+d} / V_k
        let s = |i: usize, j: usize| -> f64 {
            if i == j {
                tri[i][0]
            } else if j == i + 1 {
                tri[i][1]
            } else if i == j + 1 {
                tri[j][1]
            } else {
                0.0
            }
        };
        let band = (0..n)
            .map(|i| {
                let mut row = vec![0.0; 3];
                for (d, slot) in row.iter_mut().enumerate() {
                    let j = i + d;
                    if j >= n {
                        continue;
                    }
                    let lo = j.saturating_sub(1);
                    let hi = (i + 1).min(n - 1);
                    let mut acc = 0.0;
                    for k in lo..=hi {
                        acc += s(i, k) * s(k, j) / self.volume[k];
                    }
                    *slot = self.area * acc;
                }
                row[0] += extra[i];
                row
            })
            .collect();
        BandedSpd::new(band, 2)
    }
}

/// Symmetric positive definite banded matrix with an LDL^T factorization.
#[derive(Clone, Debug)]
pub(crate) struct BandedSpd {
    /// `band[i][d] = A_{i, i+d}`
    band: Vec<Vec<f64>>,
    width: usize,
    factored: bool,
}

impl BandedSpd {
    fn new(band: Vec<Vec<f64>>, width: usize) -> Self {
        Self { band, width, factored: false }
    }

    #[cfg(test)]
    fn row_scale(&self, i: usize) -> f64 {
        let mut s: f64 = self.band[i].iter().map(|v| v.abs()).sum();
        for d in 1..=self.width.min(i) {
            s += self.band[i - d][d].abs();
        }
        s
    }

    #[cfg(test)]
    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert!(!self.factored);
        let n = x.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            y[i] += self.band[i][0] * x[i];
            for d in 1..=self.width {
                if i + d < n {
                    y[i] += self.band[i][d] * x[i + d];
                    y[i + d] += self.band[i][d] * x[i];
                }
            }
        }
        y
    }

    /// In-place LDL^T. Afterwards `band[i][0]` holds `D_i` and `band[i][d]` holds `L_{i+d, i}`.
    pub(crate) fn factor(mut self) -> Self {
        let n = self.band.len();
        let w = self.width;
        for j in 0..n {
            let mut dj = self.band[j][0];
            for k in j.saturating_sub(w)..j {
                let l = self.band[k][j - k];
                dj -= l * l * self.band[k][0];
            }
            self.band[j][0] = dj;
            for d in 1..=w {
                let i = j + d;
                if i >= n {
                    break;
                }
                let mut a = self.band[j][d];
                for k in i.saturating_sub(w)..j {
                    a -= self.band[k][i - k] * self.band[k][j - k] * self.band[k][0];
                }
                self.band[j][d] = a / dj;
            }
        }
        self.factored = true;
        self
    }

    pub(crate) fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert!(self.factored);
        let n = rhs.len();
        let w = self.width;
        let mut y = rhs.to_vec();
        for i in 0..n {
            for k in i.saturating_sub(w)..i {
                y[i] -= self.band[k][i - k] * y[k];
            }
        }
        for (yi, row) in y.iter_mut().zip(&self.band) {
            *yi /= row[0];
        }
        for i in (0..n).rev() {
            for d in 1..=w {
                if i + d < n {
                    y[i] -= self.band[i][d] * y[i + d];
                }
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Stretch, SUPPORTED_DIMS};

    fn grid(dim: usize, n: usize) -> RadialGrid {
        RadialGrid::new(dim, n, 1e3, Stretch::default()).unwrap()
    }

    #[test]
    fn constants_are_annihilated() {
        for dim in SUPPORTED_DIMS {
            let g = grid(dim, 400);
            let op = RadialOperator::new(&g);
            for closure in [Closure::Neumann, Closure::Extrapolated] {
                let out = op.polyharmonic_values(&vec![2.5; g.len()], closure);
                assert!(out.iter().all(|v| v.abs() < 1e-6), "{dim} {closure:?}");
            }
        }
    }

    #[test]
    fn log_flux_is_exact() {
        let g = grid(2, 300);
        let op = RadialOperator::new(&g);
        let u: Vec<f64> = g.nodes().iter().map(|r| r.ln()).collect();
        let lap = op.laplacian(&u, Closure::Extrapolated);
        for v in &lap[1..] {
            assert!(v.abs() < 1e-7);
        }
    }

    #[test]
    fn energy_covector_matches_energy_gradient() {
        for dim in SUPPORTED_DIMS {
            let g = grid(dim, 120);
            let op = RadialOperator::new(&g);
            let u: Vec<f64> = g.nodes().iter().map(|r| (-r * r / 4.0).exp() + 0.1 * r.sin() / (1.0 + r)).collect();
            let cov = op.energy_covector(&u);
            let e0 = op.energy(&u);
            // E(u) = <u, cov(u)> for a quadratic form
            let pairing: f64 = u.iter().zip(&cov).map(|(a, b)| a * b).sum();
            assert!((pairing - e0).abs() <= 1e-10 * e0.abs().max(1.0), "{dim}: {pairing} vs {e0}");
        }
    }

    #[test]
    fn banded_matrix_matches_matvec_and_solves() {
        for dim in SUPPORTED_DIMS {
            let g = grid(dim, 80);
            let op = RadialOperator::new(&g);
            let extra: Vec<f64> = g.weights().iter().map(|w| w * 0.3).collect();
            let a = op.energy_matrix(&extra);
            let x: Vec<f64> = (0..g.len()).map(|i| ((i * 7 % 13) as f64 - 6.0) / 5.0).collect();
            let ax = a.apply(&x);
            let cov = op.energy_covector(&x);
            for i in 0..g.len() {
                let expect = cov[i] + extra[i] * x[i];
                let scale = a.row_scale(i);
                assert!((ax[i] - expect).abs() <= 1e-12 * scale, "{dim} row {i}: {} vs {expect}", ax[i]);
            }
            let f = a.factor();
            let back = f.solve(&ax);
            for i in 0..g.len() {
                assert!((back[i] - x[i]).abs() < 1e-7, "{dim} {i}: {} vs {}", back[i], x[i]);
            }
        }
    }
}
