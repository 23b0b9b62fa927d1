use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sbtrain::analysis::{Measure, DEFAULT_MULTIPLIERS};
use sbtrain::commands;
use sbtrain::gradsim::SubsampleMode;

#[derive(Parser, Debug)]
#[command(name = "sbtrain", version, about = "Train small classifiers with loss-based example selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one training configuration and write its run log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Run log path (overrides `log` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Speedup of candidate runs over a baseline at multiples of its final error.
    Compare {
        baseline: PathBuf,
        #[arg(required = true)]
        candidates: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_MULTIPLIERS.to_vec())]
        multipliers: Vec<f64>,
        /// CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time-vs-error points from run logs, flagged by Pareto optimality.
    Pareto {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, default_value = "backprops")]
        measure: Measure,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Flip a fraction of labels in an internal-CSV dataset.
    Corrupt {
        input: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Similarity of subsampled-batch gradients to full-batch gradients.
    Gradsim {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.25, 0.5, 1.0])]
        fractions: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "top-loss,random,low-loss")]
        modes: Vec<SubsampleMode>,
        #[arg(long, default_value_t = 1)]
        pretrain_epochs: usize,
        #[arg(long, default_value_t = 20)]
        batches: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> sbtrain::Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let output = commands::cmd_train(&config, seed, out.as_deref())?;
            let last = output.log.records.last().expect("at least one record");
            println!(
                "{}: {} epochs, final test error {:.4}, {} backprops, {} selection forwards",
                output.log.label, last.epoch, last.test_err, last.bwd, last.sel_fwd
            );
        }
        Command::Compare {
            baseline,
            candidates,
            multipliers,
            out,
        } => {
            print!("{}", commands::cmd_compare(&baseline, &candidates, &multipliers, out.as_deref())?);
        }
        Command::Pareto { logs, measure, out } => {
            let report = commands::cmd_pareto(&logs, measure, out.as_deref())?;
            if out.is_none() {
                print!("{}", report.csv());
            }
            print!("{}", report.shares_text());
        }
        Command::Corrupt {
            input,
            fraction,
            seed,
            classes,
            out,
        } => {
            let n = commands::cmd_corrupt(&input, fraction, seed, classes, &out)?;
            println!("{n} labels flipped");
        }
        Command::Gradsim {
            config,
            seed,
            fractions,
            modes,
            pretrain_epochs,
            batches,
            out,
        } => {
            let rows = commands::cmd_gradsim(&config, seed, &fractions, &modes, pretrain_epochs, batches, &out)?;
            for (f, m, c, s) in commands::gradsim_means(&rows) {
                println!("fraction {f} {m}: mean cosine {c:.4}, mean sign agreement {s:.4}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
