//! Command implementations behind the `kfac` binary.
//!
//! Subcommands: `gen-data`, `train`, `compare` and `validate-config`. Each
//! returns a [`Result`]; the binary maps errors to exit codes with
//! [`Error::exit_code`](crate::Error::exit_code).

pub mod compare;
pub mod config;
pub mod train;

use std::path::Path;

use crate::data::{gen_planted, PlantedTask};
use crate::error::Result;

pub use compare::{cmd_compare, CompareConfig, CompareOutcome, Grid};
pub use config::{load_run_config, ArchitectureSpec, DatasetSpec, Overrides, RunConfig};
pub use train::{cmd_train, read_run_csv, run_training, RunOutcome, RunRow, RUN_CSV_HEADER};

/// Generates a planted task and writes `train.csv`, `test.csv` and `teacher.json` into `out`.
pub fn cmd_gen_data(d_in: usize, n_train: usize, n_test: usize, seed: u64, out: &Path) -> Result<PlantedTask> {
    let task = gen_planted(d_in, n_train, n_test, seed)?;
    task.save(out)?;
    Ok(task)
}

/// What kind of file `validate-config` recognized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigKind {
    Run,
    Compare,
}

/// Parses and validates a run or compare config without running anything.
pub fn cmd_validate_config(path: &Path) -> Result<ConfigKind> {
    let value = config::read_json(path)?;
    if value.get("base").is_some() {
        let cfg: CompareConfig = config::from_value(value, path)?;
        cfg.validate()?;
        Ok(ConfigKind::Compare)
    } else {
        load_run_config(path)?.validate()?;
        Ok(ConfigKind::Run)
    }
}

/// Reads a compare config file.
pub fn load_compare_config(path: &Path) -> Result<CompareConfig> {
    config::from_value(config::read_json(path)?, path)
}
