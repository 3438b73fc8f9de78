use std::path::PathBuf;
use std::process::ExitCode;

use attractor_forge_cli::{run, Command, RunOptions};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "attractor-forge",
    version,
    about = "Stable blocks and their persistence under perturbation"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides output.directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "ATTRACTOR_FORGE_JOBS", value_name = "N")]
    jobs: Option<usize>,
    /// Base seed of the noise paths; overrides rds.seed0.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Ignore cached artifacts and recompute missing upstream stages.
    #[arg(long, global = true)]
    recompute: bool,
    /// Horizon of the gset stage; overrides horizons.T_list.
    #[arg(long = "T", global = true, value_name = "T")]
    horizon: Option<f64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Forward/backward-invariant sets G^T(N) and their exit sets.
    Gset,
    /// Construct and validate the stable block.
    Block,
    /// Finite-horizon perturbation verdicts.
    Verdict,
    /// Upper-semicontinuity curve over the amplitudes.
    Curve,
    /// Bounded-noise persistence statistics.
    Rds,
    /// Every stage the config has a section for.
    All,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.use_stderr() {
                true => ExitCode::from(1),
                false => ExitCode::SUCCESS,
            };
        }
    };
    let Some(config) = cli.config else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(1);
    };
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("warning: --jobs ignored: {e}");
        }
    }
    let command = match cli.command {
        Cmd::Gset => Command::Gset,
        Cmd::Block => Command::Block,
        Cmd::Verdict => Command::Verdict,
        Cmd::Curve => Command::Curve,
        Cmd::Rds => Command::Rds,
        Cmd::All => Command::All,
    };
    let opts = RunOptions {
        out: cli.out,
        seed: cli.seed,
        recompute: cli.recompute,
        horizons: cli.horizon.map(|t| vec![t]),
    };
    match run(&config, command, opts) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
