//! Experiment runner around the composition core: JSON configs in, CSV/PGM
//! artifacts and metric reports out. Everything a command writes is a pure
//! function of `(config, seed)` — wall-clock timings are quarantined in
//! their own output file so the rest byte-compares across runs and worker
//! counts.

pub mod commands;
pub mod config;
pub mod exec;
pub mod io;
pub mod models;

/// Process exit codes shared by all subcommands.
pub mod exit {
    /// Everything ran and validated.
    pub const OK: i32 = 0;
    /// The experiment is structurally invalid (graph validation failed).
    pub const VALIDATION: i32 = 1;
    /// The config or an input file could not be read or resolved.
    pub const CONFIG: i32 = 2;
    /// A numeric computation failed at runtime.
    pub const NUMERIC: i32 = 3;
}

/// Classifies an error chain into an exit code: numeric failures map to
/// [`exit::NUMERIC`], everything else to [`exit::CONFIG`].
pub fn classify_error(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<diffcollage_core::Error>() {
            match core {
                diffcollage_core::Error::Numeric(_)
                | diffcollage_core::Error::TrainingDiverged { .. } => return exit::NUMERIC,
                _ => return exit::CONFIG,
            }
        }
    }
    exit::CONFIG
}
