//! Radial numerics for conformal metrics `e^{2u}|dx|^2` on `R^n` (n = 2, 4)
//! with prescribed Q-curvature.

pub mod background;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod grid;
pub mod ineq;
pub mod kernel;
pub mod operator;
pub mod quad;
pub mod solver;

pub use background::{
    admissible_alpha_range, build_background, epsilon, modified_curvature, polyharmonic, Background, CurvatureSpec,
};
pub use diagnostics::{
    asymptotic_slope, completeness_exponent, diagnose, normality_residual, obstruction_indicator, DiagnosticsReport,
    Obstruction,
};
pub use error::{QcurvError, Result};
pub use grid::{lambda_n, make_radial_grid, sphere_area, weighted_mean, Field, RadialGrid, Stretch, WeightSpec};
pub use ineq::{halfpower_energy, hardy_ratio, mta_scan, Generator, MtaReport, TrialFamily};
pub use kernel::{angular_log_average, build_kernel_table, greens_consistency, log_potential, KernelTable};
pub use operator::{Closure, RadialOperator};
pub use solver::{
    functional_f, gradient_f, growth_check, solve, solve_fixed_point, solve_minimize, LineSearch, Method, Solution,
    SolveMethod, SolveOutcome, SolverConfig, SolverContext, TraceRow,
};
