//! `fracmag`: command-line driver for the fractional magnetic Laplacian toolkit.
//!
//! Exit codes: 0 on success, 2 for invalid flags or configuration, 3 for numerical
//! failures, unreadable inputs and I/O errors.

// `!(x >= bound)` is used on purpose so that NaN inputs are rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod plotdata;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Common, FileConfig, RunConfig, Workflow, WorkflowOptions};
use error::CliError;
use plotdata::PlotKind;

#[derive(Parser)]
#[command(name = "fracmag", version, about = "Fractional magnetic Laplacian toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Magnetic Gagliardo energy of a field.
    Seminorm(RunArgs),
    /// Pointwise fractional magnetic Laplacian of a field.
    Apply(RunArgs),
    /// Constrained ground state with a fixed L^p mass.
    Minimize(RunArgs),
    /// Critical-exponent level with unit L^p mass.
    Critical(RunArgs),
    /// Seminorm of the rescalings u_sigma.
    SigmaCurve(RunArgs),
    /// Dichotomy split of a field into an inner and an outer part.
    Split(RunArgs),
    /// Inequality and identity checks: diamagnetic, gauge, upsilon, cutoff.
    Verify(RunArgs),
    /// Fit the amplitude of the extremal profile.
    Calibrate(RunArgs),
    /// Extract tidy CSV from a result file.
    Plotdata(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    options: WorkflowOptions,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, value_enum)]
    kind: PlotKind,
    /// Result file: result.json, sigma_curve.json, energy.json or a .fmag snapshot.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn init_threads(threads: usize) -> Result<usize, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Validation(format!("`threads`: {e}")))?;
    Ok(rayon::current_num_threads())
}

fn run_workflow(workflow: Workflow, args: RunArgs) -> Result<(), CliError> {
    let (common, options) = match &args.config {
        Some(path) => {
            let file = FileConfig::load(path)?;
            (args.common.merged_with(&file.common), args.options.merged_with(file.section(workflow)))
        }
        None => (args.common, args.options),
    };
    let cfg = RunConfig::resolve(workflow, common, options)?;
    let threads = init_threads(cfg.threads)?;
    commands::write_manifest(&cfg, args.config.as_deref(), threads)?;
    commands::run(&cfg)
}

fn run_plotdata(args: PlotArgs) -> Result<(), CliError> {
    let csv = plotdata::render(args.kind, &args.input)?;
    std::fs::create_dir_all(&args.out)?;
    let manifest = serde_json::json!({
        "tool": "fracmag",
        "version": env!("CARGO_PKG_VERSION"),
        "workflow": "plotdata",
        "kind": args.kind,
        "input": args.input,
    });
    commands::write_json(&args.out.join("manifest.json"), &manifest)?;
    commands::write_text(&args.out.join(args.kind.file_name()), &csv)
}

fn dispatch(command: Command) -> Result<(), CliError> {
    let (workflow, args) = match command {
        Command::Plotdata(args) => return run_plotdata(args),
        Command::Seminorm(a) => (Workflow::Seminorm, a),
        Command::Apply(a) => (Workflow::Apply, a),
        Command::Minimize(a) => (Workflow::Minimize, a),
        Command::Critical(a) => (Workflow::Critical, a),
        Command::SigmaCurve(a) => (Workflow::SigmaCurve, a),
        Command::Split(a) => (Workflow::Split, a),
        Command::Verify(a) => (Workflow::Verify, a),
        Command::Calibrate(a) => (Workflow::Calibrate, a),
    };
    run_workflow(workflow, args)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = std::panic::catch_unwind(|| dispatch(cli.command));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("fracmag: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => {
            eprintln!("fracmag: internal error");
            ExitCode::from(3)
        }
    }
}
