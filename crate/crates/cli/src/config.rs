//! JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use qcurv_core::background::check_admissible;
use qcurv_core::ineq::Generator;
use qcurv_core::{admissible_alpha_range, CurvatureSpec, LineSearch, Method, RadialGrid, SolverConfig, Stretch};

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dimension: usize,
    #[serde(default)]
    pub grid: GridSection,
    pub curvature: CurvatureInput,
    #[serde(default)]
    pub alpha: AlphaInput,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsToggles,
    #[serde(default)]
    pub ineq: IneqSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("qcurv-out")
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Defaults to 2000.
    pub nodes: Option<usize>,
    /// Defaults to 1e8 for n = 2 and 1e3 for n = 4.
    pub r_max: Option<f64>,
    pub stretch: Option<Stretch>,
}

impl GridSection {
    pub fn build(&self, dim: usize) -> qcurv_core::Result<RadialGrid> {
        let r_max = self.r_max.unwrap_or(if dim == 4 { 1e3 } else { 1e8 });
        RadialGrid::new(dim, self.nodes.unwrap_or(2000), r_max, self.stretch.unwrap_or_default())
    }
}

/// A preset (`{"preset": "power_decay", "l": 2}`) or a CSV table (`{"csv": "f.csv", "l": 2}`).
#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum CurvatureInput {
    Csv { csv: PathBuf, l: f64 },
    Preset(CurvatureSpec),
}

impl<'de> Deserialize<'de> for CurvatureInput {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Csv {
            csv: PathBuf,
            l: f64,
        }
        let v = serde_json::Value::deserialize(d)?;
        if v.get("csv").is_some() {
            let c: Csv = serde_json::from_value(v).map_err(D::Error::custom)?;
            Ok(CurvatureInput::Csv { csv: c.csv, l: c.l })
        } else {
            serde_json::from_value(v).map(CurvatureInput::Preset).map_err(D::Error::custom)
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum AlphaInput {
    One(f64),
    List(Vec<f64>),
}

impl Default for AlphaInput {
    fn default() -> Self {
        AlphaInput::List(Vec::new())
    }
}

impl AlphaInput {
    pub fn values(&self) -> Vec<f64> {
        match self {
            AlphaInput::One(a) => vec![*a],
            AlphaInput::List(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub method: Method,
    pub damping: f64,
    pub damping_floor: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub line_search: LineSearch,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            method: d.method,
            damping: d.damping,
            damping_floor: d.damping_floor,
            tol: d.tol,
            max_iter: d.max_iter,
            line_search: d.line_search,
        }
    }
}

impl SolverSection {
    pub fn config(&self, alpha: f64) -> SolverConfig {
        SolverConfig {
            alpha,
            method: self.method,
            damping: self.damping,
            damping_floor: self.damping_floor,
            max_iter: self.max_iter,
            tol: self.tol,
            line_search: self.line_search,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsToggles {
    pub normality: bool,
    pub completeness: bool,
    pub slope: bool,
    pub obstruction: bool,
}

impl Default for DiagnosticsToggles {
    fn default() -> Self {
        Self { normality: true, completeness: true, slope: true, obstruction: true }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct IneqSection {
    pub epsilons: Vec<f64>,
    pub count: usize,
    pub seed: u64,
    pub margin: f64,
    pub generator: Generator,
    pub grid: GridSection,
}

impl Default for IneqSection {
    fn default() -> Self {
        Self {
            epsilons: vec![0.25, 0.5, 1.0, 2.0],
            count: 200,
            seed: 0,
            margin: 0.1,
            generator: Generator::Mixed { terms: 6, max_level: 8.0 },
            grid: GridSection {
                nodes: Some(3000),
                r_max: Some(1e4),
                stretch: Some(Stretch::Geometric { r_min: 1e-6 }),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub max_nodes: usize,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { max_nodes: 4000 }
    }
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

/// A checked configuration with the grid and curvature materialised.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: RunConfig,
    pub grid: RadialGrid,
    pub curvature: CurvatureSpec,
    pub decay: f64,
    pub alphas: Vec<f64>,
}

impl Prepared {
    pub fn dim(&self) -> usize {
        self.config.dimension
    }

    pub fn out(&self) -> &Path {
        &self.config.out
    }
}

/// Parses a config file, reporting the failing field path and line.
pub fn read_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("invalid config {}", path.display()))
}

pub fn parse_config(text: &str) -> anyhow::Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    match serde_path_to_error::deserialize(de) {
        Ok(cfg) => Ok(cfg),
        Err(e) => {
            let path = e.path().to_string();
            let inner = e.into_inner();
            bail!("at `{path}` (line {}, column {}): {inner}", inner.line(), inner.column())
        }
    }
}

/// Applies overrides and checks every invariant of the run configuration.
/// `require_alpha` is false for `verify`, which does not solve.
pub fn prepare(mut config: RunConfig, base: &Path, ov: &Overrides, require_alpha: bool) -> anyhow::Result<Prepared> {
    if let Some(out) = &ov.out {
        config.out = out.clone();
    }
    if let Some(w) = ov.workers {
        config.workers = Some(w);
    }
    if let Some(s) = ov.seed {
        config.ineq.seed = s;
    }
    let dim = config.dimension;
    if dim != 2 && dim != 4 {
        bail!("dimension must be 2 or 4, got {dim}");
    }
    if config.workers == Some(0) {
        bail!("workers must be at least 1");
    }
    let grid = config.grid.build(dim).context("grid")?;
    let curvature = match &config.curvature {
        CurvatureInput::Preset(spec) => spec.clone(),
        CurvatureInput::Csv { csv, l } => {
            let path = if csv.is_relative() { base.join(csv) } else { csv.clone() };
            if !path.exists() {
                bail!("curvature table {} does not exist", path.display());
            }
            CurvatureSpec::from_csv(&path, *l).with_context(|| format!("curvature table {}", path.display()))?
        }
    };
    curvature.sample(&grid).context("curvature")?;
    let decay = curvature.decay();
    let alphas = config.alpha.values();
    if require_alpha {
        if alphas.is_empty() {
            bail!("alpha list is empty");
        }
        for &a in &alphas {
            if let Err(e) = check_admissible(a, decay, dim) {
                match admissible_alpha_range(decay, dim) {
                    Ok((lo, hi)) => bail!("{e}; admissible interval for l = {decay}, n = {dim} is ({lo}, {hi})"),
                    Err(_) => bail!("{e}"),
                }
            }
        }
        config.solver.config(alphas[0]).validate().context("solver")?;
    }
    let ineq = &config.ineq;
    if ineq.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        bail!("ineq.epsilons must be positive");
    }
    if ineq.count < 2 {
        bail!("ineq.count must be at least 2");
    }
    ineq.grid.build(dim).context("ineq.grid")?;
    check_writable(&config.out)?;
    Ok(Prepared { config, grid, curvature, decay, alphas })
}

fn check_writable(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let probe = dir.join(".qcurv-probe");
    fs::write(&probe, b"").with_context(|| format!("output directory {} is not writable", dir.display()))?;
    fs::remove_file(&probe)?;
    Ok(())
}

/// Reads, overrides and checks in one step. Relative CSV paths resolve against the config's directory.
pub fn load(path: &Path, ov: &Overrides, require_alpha: bool) -> anyhow::Result<Prepared> {
    let config = read_config(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    prepare(config, base, ov, require_alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c =
            parse_config(r#"{"dimension": 2, "curvature": {"preset": "power_decay", "l": 2}, "alpha": 0.5}"#).unwrap();
        assert_eq!(c.alpha.values(), vec![0.5]);
        assert_eq!(c.solver.tol, 1e-4);
        assert_eq!(c.ineq.count, 200);
        assert!(matches!(c.curvature, CurvatureInput::Preset(CurvatureSpec::PowerDecay { l }) if l == 2.0));
    }

    #[test]
    fn csv_curvature_form() {
        let c =
            parse_config(r#"{"dimension": 4, "curvature": {"csv": "f.csv", "l": 8}, "alpha": [0.5, 1.0]}"#).unwrap();
        assert!(matches!(c.curvature, CurvatureInput::Csv { l, .. } if l == 8.0));
        assert_eq!(c.alpha.values().len(), 2);
    }

    #[test]
    fn errors_name_the_field_and_line() {
        let text = "{\n  \"dimension\": 2,\n  \"curvature\": {\"preset\": \"power_decay\", \"l\": 2},\n  \"solver\": {\"tol\": \"small\"}\n}";
        let msg = parse_config(text).unwrap_err().to_string();
        assert!(msg.contains("solver.tol"), "{msg}");
        assert!(msg.contains("line 4"), "{msg}");
        let msg = parse_config(r#"{"dimension": 2, "curvature": {"preset": "power_decay", "l": 2}, "grdi": {}}"#)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("grdi"), "{msg}");
    }
}
