//! `bafpn` command-line entry point.
//!
//! Exit status: 0 on success, 1 when a suite fails or a run errors, 2 on
//! usage errors.

mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bafpn", version, about = "Verification suites and alignment experiments for the BAFPN neck")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finite-difference gradient checks over every op, block and the full neck.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Smallest finite-difference step; each case may use a larger one.
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        /// Replaces every per-class tolerance.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Fast kernels against brute-force references.
    Oracle {
        #[arg(long, default_value_t = 60)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Trainable parameters per module and against plain-convolution baselines.
    ParamCount {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Generates a misaligned synthetic pyramid and trains the neck to realign it.
    SynthAlign {
        #[arg(long)]
        config: PathBuf,
        /// Metrics stream, one JSON record per line.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Seeds both the dataset and the parameter initialisation.
        #[arg(long)]
        seed: Option<u64>,
        /// Record elapsed wall time in the metrics (makes streams non-reproducible).
        #[arg(long)]
        wall_clock: bool,
        /// Also train the plain FPN variant on the same data and report the gap.
        #[arg(long)]
        compare_fpn: bool,
        /// Save the trained parameters.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Wall time of the forward pass.
    ForwardBench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10)]
        repeat: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gradcheck { seed, eps, tol, json } => commands::gradcheck(seed, eps, tol, json),
        Command::Oracle { trials, seed, json } => commands::oracle(trials, seed, json),
        Command::ParamCount { config, json } => commands::param_count(&config, json),
        Command::SynthAlign {
            config,
            out,
            steps,
            seed,
            wall_clock,
            compare_fpn,
            checkpoint,
        } => commands::synth_align(commands::SynthArgs {
            config,
            out,
            steps,
            seed,
            wall_clock,
            compare_fpn,
            checkpoint,
        }),
        Command::ForwardBench { config, repeat, seed } => commands::forward_bench(&config, repeat, seed),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
