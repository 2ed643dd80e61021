//! Command-line front end: BER sweeps, figure presets, solver certification,
//! and a self-check.

mod config;
mod kkt;
mod presets;
mod report;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failures mapped onto the process exit code: 1 for a failed check or run,
/// 2 for configuration/usage problems, 3 for filesystem trouble.
#[derive(Debug)]
pub enum CliError {
    Failed(String),
    Config(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Failed(m) | CliError::Config(m) | CliError::Io(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "scfde",
    version,
    about = "Bit-error-rate simulation of a two-hop decode-and-forward relay link \
             with single-carrier frequency-domain equalization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sweep; one CSV row per configuration and SNR point
    Sweep(RunArgs),
    /// Certify the power-allocation fixed point on random channel draws
    KktCheck(kkt::KktArgs),
    /// Run fast internal consistency checks
    Selftest(selftest::SelftestArgs),
    /// Preset sweep: antenna-count comparison over an SNR grid
    Fig2(RunArgs),
    /// Preset sweep: equalizer and allocation comparison on the 2x2 link
    Fig3(RunArgs),
    /// Preset sweep: delay-spread sensitivity of the 3x3 link at one SNR
    Fig4(RunArgs),
}

/// Flags shared by every command that reads a configuration.
#[derive(Args, Clone)]
pub struct RunArgs {
    /// JSON configuration file; missing fields take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the output here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override one configuration field, e.g. --override trials=500 (repeatable)
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads for the trial loop; all cores when omitted
    #[arg(long)]
    threads: Option<usize>,
    /// Shorthand for --override base_seed=N, applied last
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Sweep(args) => run_sweep_command(args, None),
        Command::Fig2(args) => run_sweep_command(args, Some(presets::Preset::Fig2)),
        Command::Fig3(args) => run_sweep_command(args, Some(presets::Preset::Fig3)),
        Command::Fig4(args) => run_sweep_command(args, Some(presets::Preset::Fig4)),
        Command::KktCheck(args) => kkt::run(args),
        Command::Selftest(args) => selftest::run(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}

fn run_sweep_command(args: &RunArgs, preset: Option<presets::Preset>) -> Result<(), CliError> {
    let base = config::load(args)?;
    let configs = match preset {
        None => vec![base],
        Some(p) => presets::expand(p, &base),
    };
    for cfg in &configs {
        cfg.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let pool = build_pool(args.threads)?;
    let mut text = String::from(report::CSV_HEADER);
    text.push('\n');
    for cfg in &configs {
        let records = pool
            .install(|| scfde::link_sim::run_sweep(cfg))
            .map_err(map_run_error)?;
        for record in &records {
            text.push_str(&report::csv_row(record));
            text.push('\n');
        }
    }
    write_output(args.out.as_deref(), &text)
}

pub fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))
}

/// Library failures during a run: bad configurations are usage errors,
/// anything else means the run itself failed.
pub fn map_run_error(err: scfde::Error) -> CliError {
    match err {
        scfde::Error::InvalidConfig(_) => CliError::Config(err.to_string()),
        other => CliError::Failed(other.to_string()),
    }
}

pub fn write_output(path: Option<&std::path::Path>, text: &str) -> Result<(), CliError> {
    use std::io::Write;
    match path {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("cannot write to stdout: {e}"))),
    }
}
