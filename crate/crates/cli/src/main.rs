//! `gihelm`: solve, train, render and inspect Green-integral Helmholtz runs.
//!
//! Exit codes: 0 success, 1 error, 2 numerical divergence, 3 non-finite
//! training loss.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod manifest;
mod render;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::render::Part;
use crate::run::{Run, EXIT_ERROR};

#[derive(Parser)]
#[command(
    name = "gihelm",
    version,
    about = "Green-integral Helmholtz solver and neural-field trainer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving outputs and the manifest.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Replaces `train.seed`.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Replaces `train.epochs`.
    #[arg(long)]
    epochs_override: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve (I − A)·us = b with the configured solver.
    Solve(RunArgs),
    /// Train the neural field.
    Train(RunArgs),
    /// Write a field file as a grayscale PGM or PNG.
    Render {
        #[arg(long)]
        field: PathBuf,
        /// Output image; `.png` selects PNG, anything else PGM.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "abs")]
        part: Part,
    },
    /// Write the padded Green's function kernel samples.
    KernelDump(RunArgs),
    /// Write the collocation pool a training run would draw from.
    PoolDump(RunArgs),
}

fn start(name: &'static str, a: &RunArgs) -> anyhow::Result<Run> {
    Run::new(name, &a.config, &a.out_dir, a.seed_override, a.epochs_override)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => start("solve", a).and_then(run::solve),
        Command::Train(a) => start("train", a).and_then(run::train_cmd),
        Command::KernelDump(a) => start("kernel-dump", a).and_then(run::kernel_dump),
        Command::PoolDump(a) => start("pool-dump", a).and_then(run::pool_dump),
        Command::Render { field, out, part } => run::render_cmd(field, out, *part),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
