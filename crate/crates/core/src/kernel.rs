//! Angular-averaged logarithmic kernel and the log-potential operator.
//!
//! For radial densities the potential `(2/Lambda_n) int log(|y|/|x-y|) rho(y) dy`
//! reduces to a 1D integral against
//! `A_n(s, r) = mean over omega in S^{n-1} of log|s e_1 - r omega|`.
//! Writing `A_n(s, r) = log max(s, r) + E_n(t)` with `t = min/max`, the excess
//! `E_n(t) = mean of (1/2) log(1 - 2t cos(theta) + t^2)` is what gets tabulated.
//! It is evaluated by Gauss–Legendre panels graded geometrically towards
//! `theta = 0`, where the integrand develops a log singularity as `t -> 1`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{QcurvError, Result};
use crate::grid::{lambda_n, Field, RadialGrid};
use crate::operator::{Closure, RadialOperator};
use crate::quad::gauss_legendre;

/// Default cap on the number of nodes for a dense table.
pub const DEFAULT_MAX_NODES: usize = 2000;

const PANEL_POINTS: usize = 12;
const MAX_DEPTH: usize = 60;

/// `int_0^pi sin^m(theta) d theta`
fn sine_power_integral(m: usize) -> f64 {
    match m {
        0 => std::f64::consts::PI,
        1 => 2.0,
        _ => (m as f64 - 1.0) / m as f64 * sine_power_integral(m - 2),
    }
}

/// Precomputed panel nodes for the polar-angle average.
#[derive(Debug)]
struct AngularRule {
    /// `(sin^2(theta/2), weight)` for panels `[pi 2^{-k-1}, pi 2^{-k}]`, k = 0..MAX_DEPTH
    panels: Vec<Vec<(f64, f64)>>,
    /// `(sin^2(theta/2), weight)` for the closing panel `[0, pi 2^{-k}]`, k = 1..=MAX_DEPTH
    caps: Vec<Vec<(f64, f64)>>,
}

impl AngularRule {
    fn new(dim: usize) -> Self {
        let (x, w) = gauss_legendre(PANEL_POINTS);
        let m = dim - 2;
        let norm = sine_power_integral(m);
        let rule = |a: f64, b: f64| -> Vec<(f64, f64)> {
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            x.iter()
                .zip(&w)
                .map(|(xi, wi)| {
                    let theta = mid + half * xi;
                    let s = (0.5 * theta).sin();
                    (s * s, wi * half * theta.sin().powi(m as i32) / norm)
                })
                .collect()
        };
        let pi = std::f64::consts::PI;
        let panels = (0..MAX_DEPTH).map(|k| rule(pi * 0.5f64.powi(k as i32 + 1), pi * 0.5f64.powi(k as i32))).collect();
        let caps = (1..=MAX_DEPTH).map(|k| rule(0.0, pi * 0.5f64.powi(k as i32))).collect();
        Self { panels, caps }
    }

    fn shared(dim: usize) -> &'static AngularRule {
        static TWO: OnceLock<AngularRule> = OnceLock::new();
        static FOUR: OnceLock<AngularRule> = OnceLock::new();
        match dim {
            2 => TWO.get_or_init(|| AngularRule::new(2)),
            4 => FOUR.get_or_init(|| AngularRule::new(4)),
            _ => unreachable!("dimension validated by callers"),
        }
    }

    /// `E_n(t)` for `0 <= t <= 1`.
    fn excess(&self, t: f64) -> f64 {
        let gap = (1.0 - t) * (1.0 - t);
        let scale = 4.0 * t;
        let depth = if t >= 1.0 {
            MAX_DEPTH
        } else {
            let delta = (1.0 - t) / (2.0 * t.sqrt());
            let k = (std::f64::consts::PI / (2.0 * delta)).log2().ceil();
            (k.max(1.0) as usize).min(MAX_DEPTH)
        };
        let mut total = 0.0;
        for panel in self.panels.iter().take(depth).chain(std::iter::once(&self.caps[depth - 1])) {
            for &(s2, w) in panel {
                total += w * (gap + scale * s2).ln();
            }
        }
        0.5 * total
    }
}

fn check_kernel_dim(dim: usize) -> Result<()> {
    crate::grid::check_dimension(dim)
}

/// Mean of `log|s e_1 - r omega|` over the unit sphere `S^{n-1}`.
///
/// At `s = r` the log-sine singularity is integrated by the deepest graded rule,
/// so `A_n(s, s) = log s + E_n(1)`.
pub fn angular_log_average(dim: usize, s: f64, r: f64) -> Result<f64> {
    check_kernel_dim(dim)?;
    if !(s > 0.0 && r > 0.0) {
        return Err(QcurvError::NonPositiveRadius { s, r });
    }
    let (lo, hi) = if s < r { (s, r) } else { (r, s) };
    Ok(hi.ln() + AngularRule::shared(dim).excess(lo / hi))
}

/// Dense table of the angular-averaged kernel on one grid.
#[derive(Clone, Debug)]
pub struct KernelTable {
    dim: usize,
    len: usize,
    grid_id: u64,
    r_max: f64,
    lambda_n: f64,
    /// `E[i][j] = A_n(r_i, r_j) - log max(r_i, r_j)`, symmetric
    excess: Vec<f64>,
    /// `G[i][j] = log r_j - A_n(r_i, r_j)`, the radial potential kernel
    potential: Vec<f64>,
    log_r: Vec<f64>,
}

/// Environment variable naming the kernel cache directory.
pub const CACHE_ENV: &str = "QCURV_KERNEL_CACHE";
const CACHE_MAGIC: &[u8; 8] = b"QCKERN01";

/// `kernel-n<dim>-N<len>-<checksum>.bin`
pub fn cache_file_name(grid: &RadialGrid) -> String {
    format!("kernel-n{}-N{}-{:016x}.bin", grid.dim(), grid.len(), grid.id())
}

/// Builds the table with the default node cap.
pub fn build_kernel_table(grid: &RadialGrid) -> Result<KernelTable> {
    KernelTable::build(grid, DEFAULT_MAX_NODES)
}

impl KernelTable {
    pub fn build(grid: &RadialGrid, max_nodes: usize) -> Result<Self> {
        let n = grid.len();
        if n > max_nodes {
            return Err(QcurvError::KernelTooLarge { nodes: n, limit: max_nodes });
        }
        let rule = AngularRule::shared(grid.dim());
        let r = grid.nodes();
        let upper: Vec<Vec<f64>> =
            (0..n).into_par_iter().map(|i| (i..n).map(|j| rule.excess(r[i] / r[j])).collect()).collect();
        let mut excess = vec![0.0; n * n];
        for (i, row) in upper.into_iter().enumerate() {
            for (k, v) in row.into_iter().enumerate() {
                excess[i * n + i + k] = v;
                excess[(i + k) * n + i] = v;
            }
        }
        Ok(Self::from_excess(grid, excess))
    }

    pub(crate) fn from_excess(grid: &RadialGrid, excess: Vec<f64>) -> Self {
        let n = grid.len();
        let r = grid.nodes();
        let mut potential = vec![0.0; n * n];
        potential.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for j in 0..n {
                let log_ratio = if j < i { (r[j] / r[i]).ln() } else { 0.0 };
                row[j] = log_ratio - excess[i * n + j];
            }
        });
        Self {
            dim: grid.dim(),
            len: n,
            grid_id: grid.id(),
            r_max: grid.r_max(),
            lambda_n: lambda_n(grid.dim()),
            excess,
            potential,
            log_r: r.iter().map(|x| x.ln()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn grid_id(&self) -> u64 {
        self.grid_id
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// `(n-1)! |S^n|`
    pub fn lambda_n(&self) -> f64 {
        self.lambda_n
    }

    /// `A_n(r_i, r_j)`
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.log_r[i].max(self.log_r[j]) + self.excess[i * self.len + j]
    }

    /// `A_n(r_i, r_j) - log max(r_i, r_j)`
    pub fn excess(&self, i: usize, j: usize) -> f64 {
        self.excess[i * self.len + j]
    }

    /// Writes the excess table: magic, then `n`, `N`, `R_max`, grid checksum, then `N^2`
    /// row-major `f64`, all little-endian.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(CACHE_MAGIC)?;
            w.write_all(&(self.dim as u64).to_le_bytes())?;
            w.write_all(&(self.len as u64).to_le_bytes())?;
            w.write_all(&self.r_max.to_le_bytes())?;
            w.write_all(&self.grid_id.to_le_bytes())?;
            for v in &self.excess {
                w.write_all(&v.to_le_bytes())?;
            }
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Reads a table written by [`KernelTable::save`], checking it belongs to `grid`.
    pub fn load(path: &Path, grid: &RadialGrid) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(QcurvError::Cache(format!("{} is not a kernel table", path.display())));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut BufReader<File>| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let dim = u64::from_le_bytes(next(&mut r)?) as usize;
        let len = u64::from_le_bytes(next(&mut r)?) as usize;
        let r_max = f64::from_le_bytes(next(&mut r)?);
        let id = u64::from_le_bytes(next(&mut r)?);
        if dim != grid.dim() || len != grid.len() || r_max != grid.r_max() || id != grid.id() {
            return Err(QcurvError::Cache(format!(
                "{} holds n = {dim}, N = {len}, R = {r_max}, checksum {id:016x}; grid has n = {}, N = {}, R = {}, checksum {:016x}",
                path.display(),
                grid.dim(),
                grid.len(),
                grid.r_max(),
                grid.id()
            )));
        }
        let mut bytes = Vec::with_capacity(len * len * 8);
        r.read_to_end(&mut bytes)?;
        if bytes.len() != len * len * 8 {
            return Err(QcurvError::Cache(format!("{} is truncated", path.display())));
        }
        let excess = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        Ok(Self::from_excess(grid, excess))
    }

    /// Uses `$QCURV_KERNEL_CACHE/<name>` when the variable names a directory, building and
    /// storing the table on a miss. Without the variable this is [`KernelTable::build`].
    pub fn cached(grid: &RadialGrid, max_nodes: usize) -> Result<Self> {
        let Some(dir) = std::env::var_os(CACHE_ENV) else {
            return Self::build(grid, max_nodes);
        };
        let path = Path::new(&dir).join(cache_file_name(grid));
        if path.exists() {
            match Self::load(&path, grid) {
                Ok(t) => return Ok(t),
                Err(e) => log::warn!("ignoring kernel cache entry: {e}"),
            }
        }
        let table = Self::build(grid, max_nodes)?;
        if let Err(e) = fs::create_dir_all(&dir).map_err(QcurvError::from).and_then(|_| table.save(&path)) {
            log::warn!("could not write kernel cache {}: {e}", path.display());
        }
        Ok(table)
    }

    fn check(&self, grid: &RadialGrid) -> Result<()> {
        if grid.id() != self.grid_id {
            return Err(QcurvError::GridMismatch);
        }
        Ok(())
    }

    pub(crate) fn potential_values(&self, grid: &RadialGrid, rho: &[f64]) -> Vec<f64> {
        let q: Vec<f64> = grid.weights().iter().zip(rho).map(|(w, p)| w * p).collect();
        let c = 2.0 / self.lambda_n;
        self.potential.par_chunks(self.len).map(|row| c * row.iter().zip(&q).map(|(k, q)| k * q).sum::<f64>()).collect()
    }

    /// `L[rho](x) = (2/Lambda_n) int log(|y|/|x-y|) rho(y) dy`, radially.
    pub fn log_potential(&self, grid: &RadialGrid, rho: &Field) -> Result<Field> {
        self.check(grid)?;
        grid.check(rho)?;
        Ok(Field::from_raw(grid.id(), self.potential_values(grid, rho.values())))
    }
}

/// See [`KernelTable::log_potential`].
pub fn log_potential(grid: &RadialGrid, rho: &Field, table: &KernelTable) -> Result<Field> {
    table.log_potential(grid, rho)
}

/// Relative `L^2` residual of `(-Delta)^{n/2} L[rho] = rho` over interior nodes.
pub fn greens_consistency(grid: &RadialGrid, rho: &Field, table: &KernelTable, op: &RadialOperator) -> Result<f64> {
    let pot = table.log_potential(grid, rho)?;
    let back = op.polyharmonic(&pot, Closure::Extrapolated)?;
    let w = grid.weights();
    let mut err = 0.0;
    let mut norm = 0.0;
    for i in grid.interior() {
        err += w[i] * (back[i] - rho[i]).powi(2);
        norm += w[i] * rho[i].powi(2);
    }
    if norm == 0.0 {
        return Ok(err.sqrt());
    }
    Ok((err / norm).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Stretch;
    use crate::quad::composite_gauss;
    use std::f64::consts::PI;

    /// Plain composite Gauss–Legendre on the polar angle, no grading.
    fn brute_average(dim: usize, s: f64, r: f64) -> f64 {
        let m = (dim - 2) as i32;
        let num = composite_gauss(
            |th| 0.5 * (s * s + r * r - 2.0 * s * r * th.cos()).ln() * th.sin().powi(m),
            0.0,
            PI,
            400,
            16,
        );
        num / sine_power_integral(dim - 2)
    }

    #[test]
    fn mean_value_property_in_two_dimensions() {
        let v = angular_log_average(2, 2.0, 1.0).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        assert!((angular_log_average(2, 0.3, 5.0).unwrap() - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_sine_integral_vanishes_on_the_diagonal() {
        // int_0^{2pi} log(2 sin(theta/2)) = 0
        let oracle = composite_gauss(|th| (2.0 * (0.5 * th).sin()).ln(), 0.0, 2.0 * PI, 20000, 8) / (2.0 * PI);
        assert!(oracle.abs() < 1e-4);
        assert!(angular_log_average(2, 1.0, 1.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn four_dimensional_reference_value() {
        let oracle = brute_average(4, 1.0, 0.5);
        assert!((oracle - 0.0625).abs() < 1e-10);
        assert!((angular_log_average(4, 1.0, 0.5).unwrap() - 0.0625).abs() < 1e-6);
    }

    #[test]
    fn near_diagonal_accuracy() {
        for dim in [2usize, 4] {
            for &t in &[0.9, 0.99, 0.999, 0.9999] {
                let got = angular_log_average(dim, 1.0, t).unwrap();
                // Gegenbauer expansion: E_2 = 0, E_4 = t^2/4.
                let exact = if dim == 2 { 0.0 } else { t * t / 4.0 };
                assert!((got - exact).abs() < 1e-12, "dim {dim} t {t}: {got}");
            }
        }
    }

    #[test]
    fn rejects_non_positive_radii() {
        assert!(angular_log_average(2, 0.0, 1.0).is_err());
        assert!(angular_log_average(4, 1.0, -1.0).is_err());
        assert!(angular_log_average(3, 1.0, 1.0).is_err());
    }

    #[test]
    fn table_is_symmetric_and_matches_closed_form() {
        let g = RadialGrid::new(2, 300, 100.0, Stretch::default()).unwrap();
        let t = build_kernel_table(&g).unwrap();
        let r = g.nodes();
        let mut worst: f64 = 0.0;
        for i in 0..g.len() {
            for j in 0..g.len() {
                assert_eq!(t.a(i, j), t.a(j, i));
                worst = worst.max((t.a(i, j) - r[i].max(r[j]).ln()).abs());
            }
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn cap_is_enforced() {
        let g = RadialGrid::new(2, 300, 100.0, Stretch::default()).unwrap();
        assert!(matches!(KernelTable::build(&g, 100), Err(QcurvError::KernelTooLarge { .. })));
    }

    #[test]
    fn zero_density_gives_zero_potential() {
        let g = RadialGrid::new(4, 200, 100.0, Stretch::default()).unwrap();
        let t = build_kernel_table(&g).unwrap();
        let l = t.log_potential(&g, &g.zeros()).unwrap();
        assert!(l.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kernel_sign_structure() {
        let g = RadialGrid::new(4, 150, 100.0, Stretch::default()).unwrap();
        let t = build_kernel_table(&g).unwrap();
        let r = g.nodes();
        for i in 0..g.len() {
            for j in 0..=i {
                assert!(r[j].ln() - t.a(i, j) <= 1e-14);
            }
        }
    }
}
