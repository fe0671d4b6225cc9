//! `epicg` command-line experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use epicg::harness::{run_experiment, ExperimentKind, Settings};

#[derive(Parser)]
#[command(name = "epicg", version, about = "Massive-MIMO EP detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit variance correction coefficients and write a calibration file.
    Calibrate(Flags),
    /// Symbol error rate over an SNR grid.
    SerSweep(Flags),
    /// Median solver residual over the steps of early EP iterations.
    RreTrace(Flags),
    /// Mean total pCG steps per detection.
    StepCount(Flags),
}

/// Every flag is also accepted as a `key = value` line in `--config`.
#[derive(Args)]
struct Flags {
    /// Key-value config file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nt: Option<String>,
    #[arg(long)]
    nr: Option<String>,
    /// QAM order (4, 16, 64, ...).
    #[arg(long = "mod")]
    order: Option<String>,
    /// rayleigh or kronecker.
    #[arg(long)]
    channel: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    /// lo:step:hi in dB, a single value, or a comma list.
    #[arg(long)]
    snr: Option<String>,
    #[arg(long)]
    detectors: Option<String>,
    /// Monte-Carlo channel count.
    #[arg(long)]
    channels: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long = "tol-schedule")]
    tol_schedule: Option<String>,
    #[arg(long)]
    calib: Option<String>,
    /// on or off.
    #[arg(long = "warm-start")]
    warm_start: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    jobs: Option<String>,
    /// Scenarios harvested by `calibrate`.
    #[arg(long)]
    scenarios: Option<String>,
    /// Floor on tilted variances in the EP site update.
    #[arg(long = "variance-floor")]
    variance_floor: Option<String>,
    /// Detector for the calibration SNR search: ep or epicg.
    #[arg(long = "calib-probe")]
    calib_probe: Option<String>,
    /// Detector whose trajectories are harvested: epicg or ep.
    #[arg(long = "calib-source")]
    calib_source: Option<String>,
}

impl Flags {
    fn settings(&self) -> anyhow::Result<Settings> {
        let base = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Settings::from_config_text(&text).with_context(|| format!("in {}", path.display()))?
            }
            None => Settings::default(),
        };
        let pairs = [
            ("nt", &self.nt),
            ("nr", &self.nr),
            ("mod", &self.order),
            ("channel", &self.channel),
            ("rho", &self.rho),
            ("snr", &self.snr),
            ("detectors", &self.detectors),
            ("channels", &self.channels),
            ("seed", &self.seed),
            ("beta", &self.beta),
            ("iters", &self.iters),
            ("tol-schedule", &self.tol_schedule),
            ("calib", &self.calib),
            ("warm-start", &self.warm_start),
            ("out", &self.out),
            ("jobs", &self.jobs),
            ("scenarios", &self.scenarios),
            ("variance-floor", &self.variance_floor),
            ("calib-probe", &self.calib_probe),
            ("calib-source", &self.calib_source),
        ];
        let mut flags = Settings::default();
        for (key, value) in pairs {
            if let Some(v) = value {
                flags.set(key, v).with_context(|| format!("--{key}"))?;
            }
        }
        Ok(base.merged(flags))
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (kind, flags) = match &cli.command {
        Command::Calibrate(f) => (ExperimentKind::Calibrate, f),
        Command::SerSweep(f) => (ExperimentKind::SerSweep, f),
        Command::RreTrace(f) => (ExperimentKind::RreTrace, f),
        Command::StepCount(f) => (ExperimentKind::StepCount, f),
    };
    let spec = flags.settings()?.into_spec(kind)?;
    run_experiment(&spec)?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // One line: the error chain joined.
            let msg: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("epicg: {}", msg.join(": "));
            ExitCode::FAILURE
        }
    }
}
