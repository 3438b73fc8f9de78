//! Config-driven experiment runner: G-sets, stable blocks, perturbation
//! verdicts, semicontinuity curves and bounded-noise persistence.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

use std::path::{Path, PathBuf};

pub use config::ExperimentConfig;
pub use error::{ErrorClass, RunError};
pub use pipeline::{load_config, Prepared, RunOptions, Runner, Stage};
pub use report::{Report, Warning, SCHEMA_TAG};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gset,
    Block,
    Verdict,
    Curve,
    Rds,
    All,
}

/// Run `command` for the config at `config_path`; returns the report path.
pub fn run(config_path: &Path, command: Command, opts: RunOptions) -> Result<PathBuf, RunError> {
    let mut config = load_config(config_path)?;
    if let (Some(seed), Some(r)) = (opts.seed, config.rds.as_mut()) {
        r.seed0 = seed;
    }
    if let Some(t) = &opts.horizons {
        config.horizons.T_list = t.clone();
    }
    let prepared = Prepared::new(config)?;
    let stages: Vec<Stage> = match command {
        Command::Gset => vec![Stage::Gset],
        Command::Block => vec![Stage::Block],
        Command::Verdict => vec![Stage::Verdict],
        Command::Curve => vec![Stage::Curve],
        Command::Rds => vec![Stage::Rds],
        Command::All => {
            let mut s = vec![Stage::Gset, Stage::Block];
            if prepared.family.is_some() {
                s.extend([Stage::Verdict, Stage::Curve]);
            }
            if prepared.noise.is_some() {
                s.push(Stage::Rds);
            }
            s
        }
    };
    let all = command == Command::All;
    let mut runner = Runner::new(prepared, opts, all)?;
    for stage in stages {
        runner.run_stage(stage, all)?;
    }
    runner.write_report()
}
