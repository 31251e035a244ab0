use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use grinlab::data::Split;
use grinlab_cli::{commands, worker_threads, CliError};

#[derive(Parser)]
#[command(name = "grinlab", version, about = "Unlearning experiments on a small synthetic-fact transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the corpus and train the base model.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the model and training seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the `unlearn` section once and evaluate it.
    Unlearn {
        #[arg(long)]
        config: PathBuf,
        /// Base checkpoint; trained into the output directory when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the unlearning seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Use this mask instead of computing one.
        #[arg(long)]
        mask_file: Option<PathBuf>,
    },
    /// Run every sweep cell for every seed and write comparison tables.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rank stored runs and write density and timing tables.
    Report {
        /// Results directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, out, seed } => {
            let record = commands::train(&config, out.as_deref(), seed)?;
            println!("base {} ({} params)", &record.fingerprint[..12], record.n_params);
            for m in &record.metrics {
                println!("  {:<7} K-Acc {:.3}  Rouge {:.3}  1-TR {:.3}", m.split, m.keyword_accuracy, m.rouge_l_recall, m.one_minus_truth_ratio);
            }
        }
        Command::Unlearn { config, checkpoint, out, seed, mask_file } => {
            let (result, dir) = commands::unlearn(&config, checkpoint.as_deref(), out.as_deref(), seed, mask_file.as_deref())?;
            println!("{} [{}] -> {}", result.run_id, result.method, dir.display());
            for split in [Split::Forget, Split::Retain, Split::World] {
                println!(
                    "  {:<7} K-Acc {:.3} -> {:.3}",
                    split,
                    result.report(split, false).keyword_accuracy,
                    result.report(split, true).keyword_accuracy
                );
            }
            println!("  mask {:.2}s  unlearning {:.2}s", result.mask_seconds, result.unlearn_seconds);
        }
        Command::Sweep { config, checkpoint, out, seed } => {
            let outcome = commands::sweep(&config, checkpoint.as_deref(), out.as_deref(), seed, worker_threads())?;
            let failed: usize = outcome.cells.iter().map(|c| c.failures.len()).sum();
            println!(
                "{} cells, {} runs ({} cached), {} failed",
                outcome.cells.len(),
                outcome.runs.len(),
                outcome.reused,
                failed
            );
            for c in &outcome.cells {
                for f in &c.failures {
                    eprintln!("{} p={} sigma={}: seed {f}", c.method, c.p_fraction, c.noise_sigma);
                }
            }
            if outcome.runs.is_empty() && failed > 0 {
                return Err(grinlab::Error::Contract("every sweep run failed".into()).into());
            }
        }
        Command::Report { out } => {
            let report = commands::report(&out)?;
            print!("{}", report.markdown);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
