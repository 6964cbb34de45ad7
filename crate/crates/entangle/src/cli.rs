//! Argument parsing and exit-code mapping.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "entangle", version, about = "Hidden-state diagnostics for failure modes of reasoning traces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Master seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file overlaid on the command defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Leave the timestamp out of reports so reruns are byte-identical.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Task {
    BinaryOt,
    ThreeWay,
    Correctness,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check every archive invariant.
    Validate {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Label traces as OT / non-OT incorrect / correct and sweep thresholds.
    Regimes {
        #[arg(long, required_unless_present = "traces", conflicts_with = "traces")]
        archive: Option<PathBuf>,
        /// Traces JSON-lines file instead of an archive.
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Contrastive directions, cosines, specificity and spread per layer.
    Geometry {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Single layer; all layers when absent.
        #[arg(long)]
        layer: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validated linear probes; sweeps layers unless --layer is given.
    Probe {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        task: Option<Task>,
        #[arg(long)]
        layer: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Apply an intervention to an archive (probe readout) or a testbed world.
    Intervene {
        #[arg(long, required_unless_present = "world", conflicts_with = "world")]
        archive: Option<PathBuf>,
        /// Run on the synthetic world from the config instead of an archive.
        #[arg(long)]
        world: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, allow_negative_numbers = true)]
        alpha: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// AUROC, coverage curves and the linear accessibility profile.
    Selective {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        layer: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Sample the synthetic world and export it as an archive.
    Testbed {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rho: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the gap suite over the committed fixtures.
    ReproGap {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated rho grid, e.g. "0,0.5,1".
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        grid: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
}

/// Usage mistakes detected after parsing, such as a flag combination the
/// command cannot honor. Maps to exit code 2, as do config errors.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// What a command concluded when it ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The command ran but a checked invariant does not hold.
    Failed,
}

pub fn dispatch(cmd: Command) -> anyhow::Result<Outcome> {
    match cmd {
        Command::Validate { archive, out, common } => commands::validate::run(&archive, out.as_deref(), &common),
        Command::Regimes { archive, traces, out, common } => {
            commands::regimes::run(archive.as_deref(), traces.as_deref(), &out, &common)
        }
        Command::Geometry { archive, out, layer, common } => commands::geometry::run(&archive, &out, layer, &common),
        Command::Probe { archive, out, task, layer, common } => commands::probe::run(&archive, &out, task, layer, &common),
        Command::Intervene { archive, world, out, layer, alpha, k, common } => {
            let flags = commands::intervene::Flags { layer, alpha, k };
            if world {
                commands::intervene::run_world(&out, flags, &common)
            } else {
                let archive = archive.expect("clap requires --archive without --world");
                commands::intervene::run_archive(&archive, &out, flags, &common)
            }
        }
        Command::Selective { archive, out, layer, common } => commands::selective::run(&archive, &out, layer, &common),
        Command::Testbed { out, rho, common } => commands::testbed::run(&out, rho, &common),
        Command::ReproGap { out, grid, common } => commands::repro_gap::run(&out, grid, &common),
    }
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.is::<UsageError>() || c.is::<crate::config::ConfigError>())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Success) => EXIT_OK,
        Ok(Outcome::Failed) => EXIT_FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_usage(&e) {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}
