//! Command-line front end: single runs, Monte Carlo sampling, the efficiency
//! sweep, the decomposition table check and the Fock-space cross-checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod figure4;
pub mod oracle;
pub mod run;
pub mod table1;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{Format, Overrides};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_ASSERTION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Assertion(String),
    #[error(transparent)]
    Model(#[from] entangler::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use entangler::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io(_) => EXIT_USAGE,
            CliError::Assertion(_) => EXIT_ASSERTION,
            CliError::Model(e) => match e {
                E::Domain(_)
                | E::SeparationTooSmall { .. }
                | E::TruncationFailure { .. }
                | E::CutoffLeakage { .. }
                | E::TailTooHeavy { .. }
                | E::NonFinite
                | E::AmplitudeTooLarge(_)
                | E::ZeroNorm
                | E::NonNormalizedTarget(_) => EXIT_NUMERIC,
                _ => EXIT_USAGE,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "entangler", version, about = "Photon-pair entangler simulator")]
pub struct Cli {
    /// TOML file with default settings; flags override it
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One end-to-end run with a full report
    Run(CommandArgs),
    /// Many seeded end-to-end runs with outcome statistics
    Sample(CommandArgs),
    /// Efficiency against fidelity for several transmissions, as CSV
    Figure4(CommandArgs),
    /// Decomposition heralding table on basis and random inputs
    Table1(CommandArgs),
    /// Label algebra against a truncated Fock-space simulation
    Oracle(CommandArgs),
}

#[derive(Debug, clap::Args)]
pub struct CommandArgs {
    #[command(flatten)]
    pub settings: Overrides,
}

impl Cli {
    fn settings(&self) -> Result<Overrides, CliError> {
        let flags = match &self.command {
            Command::Run(a) | Command::Sample(a) | Command::Figure4(a) | Command::Table1(a) | Command::Oracle(a) => {
                a.settings.clone()
            }
        };
        match &self.config {
            Some(p) => Ok(flags.or(Overrides::load(p)?)),
            None => Ok(flags),
        }
    }
}

/// Runs a parsed command, writing the report to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let s = cli.settings()?;
    match cli.command {
        Command::Run(_) => run::cmd_run(&s, out),
        Command::Sample(_) => run::cmd_sample(&s, out),
        Command::Figure4(_) => figure4::cmd_figure4(&s, out),
        Command::Table1(_) => table1::cmd_table1(&s, out),
        Command::Oracle(_) => oracle::cmd_oracle(&s, out),
    }
}

/// Parses `args`, runs the command and maps the result to an exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = if code == EXIT_OK { write!(out, "{}", e.render()) } else { write!(err, "{}", e.render()) };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
