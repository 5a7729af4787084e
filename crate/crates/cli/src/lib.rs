//! Batch front end: JSON configs in, CSV/JSON artifacts out.

pub mod config;
pub mod run;
pub mod verify;

use std::path::Path;

pub use config::{load, Overrides, Prepared, RunConfig};
pub use run::{cmd_solve, cmd_sweep, RunRecord};
pub use verify::{cmd_verify, run_verify, Check, VerifyReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Verify,
    Sweep,
}

/// Loads the config, runs the command and maps the result to an exit status.
pub fn execute(cmd: Command, config: &Path, ov: &Overrides) -> i32 {
    let prepared = match load(config, ov, cmd != Command::Verify) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_CONFIG;
        }
    };
    let result = match cmd {
        Command::Solve => cmd_solve(&prepared),
        Command::Verify => cmd_verify(&prepared),
        Command::Sweep => cmd_sweep(&prepared),
    };
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAILED,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_CONFIG
        }
    }
}
