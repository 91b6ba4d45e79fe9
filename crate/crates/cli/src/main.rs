//! `ctxrec`: train, evaluate, and serve contextual session-based
//! recommenders from one TOML run configuration.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use commands::evaluate::EvaluateArgs;
use commands::generate::GenerateArgs;
use commands::predict::PredictArgs;
use commands::CliError;
use config::RunConfig;
use ctxrec_core::eval::EvalOptions;

#[derive(Parser)]
#[command(name = "ctxrec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run configuration.
    Train {
        /// TOML run configuration.
        #[arg(long, short)]
        config: PathBuf,
        /// Where to write the checkpoint, log, and effective config
        /// (overrides the CTXREC_RUN_DIR environment variable and the config).
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Score a held-out corpus and report Recall@K with bootstrap intervals.
    Evaluate {
        #[arg(long, short = 'm')]
        checkpoint: PathBuf,
        /// Canonical corpus to score.
        #[arg(long, conflicts_with = "clicks")]
        corpus: Option<PathBuf>,
        /// Raw clickstream files instead of a canonical corpus.
        #[arg(long)]
        clicks: Option<PathBuf>,
        #[arg(long, requires = "clicks")]
        buys: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 30)]
        resamples: usize,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        max_len: usize,
        /// Lower bucket boundaries for the sequence-length projection.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,10,20")]
        seq_len_buckets: Vec<usize>,
        /// Previously written report JSON to compute uplift against.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Write the report as JSON.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Directory for per-projection plot data (x, y, ci_low, ci_high, volume).
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Read one session from stdin and print the top-K next items.
    Predict {
        #[arg(long, short = 'm')]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Event type assumed for the upcoming event (name or index).
        #[arg(long)]
        next_event_type: Option<String>,
    },
    /// Sample a corpus from a synthetic generator spec (JSON).
    GenerateSynthetic {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Print the spec's closed-form best achievable Recall@K.
        #[arg(long)]
        bayes_k: Option<usize>,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, run_dir } => {
            let run_config = RunConfig::load(&config).map_err(CliError::Usage)?;
            let dir = run_config.resolve_run_dir(run_dir.as_deref());
            commands::train::run(&run_config, &dir)
        }
        Command::Evaluate {
            checkpoint,
            corpus,
            clicks,
            buys,
            k,
            resamples,
            level,
            seed,
            max_len,
            seq_len_buckets,
            baseline,
            out,
            plot_data,
        } => {
            if corpus.is_none() && clicks.is_none() {
                return Err(commands::usage(anyhow::anyhow!(
                    "evaluate needs either --corpus or --clicks"
                )));
            }
            commands::evaluate::run(&EvaluateArgs {
                checkpoint,
                corpus,
                clicks,
                buys,
                max_len,
                opts: EvalOptions {
                    k,
                    resamples,
                    level,
                    seed,
                    seq_len_buckets,
                },
                baseline,
                out,
                plot_data,
            })
        }
        Command::Predict {
            checkpoint,
            k,
            next_event_type,
        } => {
            let stdin = std::io::stdin();
            commands::predict::run(
                &PredictArgs {
                    checkpoint,
                    k,
                    next_event_type,
                },
                stdin.lock(),
            )
        }
        Command::GenerateSynthetic { spec, out, bayes_k } => {
            commands::generate::run(&GenerateArgs { spec, out, bayes_k })
        }
    }
}
