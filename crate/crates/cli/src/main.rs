//! `hsical`: verb-style entry point for the calibration pipeline.

mod commands;

use std::fmt;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "hsical", version, about = "Hyperspectral illumination calibration toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reflectance from radiance by ratio calibration.
    Calibrate(commands::CalibrateArgs),
    /// Gray-World reflectance estimate.
    Grayworld(commands::GrayworldArgs),
    /// Relight a reflectance cube under every curve in a directory.
    Expand(commands::ExpandArgs),
    /// Bin-average a cube onto 31 bands at 400..700 nm.
    Resample(commands::ResampleArgs),
    /// Quality metrics of an estimate against ground truth.
    Metrics(commands::MetricsArgs),
    /// Write a synthetic paired dataset.
    Synth(commands::SynthArgs),
    /// Train the calibration network on a dataset.
    Train(commands::TrainArgs),
    /// Score a checkpoint (and the Gray-World baseline) on a dataset.
    Eval(commands::EvalArgs),
    /// Finite-difference check of every differentiable primitive and block.
    Gradcheck(commands::GradcheckArgs),
}

/// Failure raised by the CLI itself rather than a library crate.
#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn category(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(x) = cause.downcast_ref::<CliError>() {
            return x.category;
        }
        if let Some(x) = cause.downcast_ref::<hsical_trainer::Error>() {
            return x.category();
        }
        if let Some(x) = cause.downcast_ref::<hsical_sitnet::Error>() {
            return x.category();
        }
        if let Some(x) = cause.downcast_ref::<hsical_tensor::Error>() {
            return x.category();
        }
        if let Some(x) = cause.downcast_ref::<hsical_core::Error>() {
            return x.category();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "IoFailure";
        }
    }
    "Error"
}

fn report(category: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": category, "message": message }));
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("HSICAL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError {
        category: "UsageError",
        message: format!("HSICAL_THREADS must be a positive integer, got {raw:?}"),
    })?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("UsageError", e.render().to_string().trim_end());
            return ExitCode::from(2);
        }
    };
    let result = init_threads().and_then(|()| match cli.command {
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Grayworld(a) => commands::grayworld(a),
        Command::Expand(a) => commands::expand(a),
        Command::Resample(a) => commands::resample(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = category(&e);
            report(cat, &format!("{e:#}"));
            ExitCode::from(if cat == "UsageError" { 2 } else { 1 })
        }
    }
}
