use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use pmixed_core::ensemble::{DocumentMode, Tokenization, DEFAULT_SMOOTHING};
use pmixed_core::harness::{
    cmd_account, cmd_decode, cmd_evaluate, cmd_sweep, cmd_train_shards, load_config, DecodeArgs,
    PerplexityBasis, SessionOptions, SweepArgs, SweepParam, SweepSpec, TrainShardsArgs,
};
use pmixed_core::Error;

#[derive(Parser)]
#[command(name = "pmixed", version, about = "Private next-token decoding with adaptive screening")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a corpus and train the public and private n-gram models.
    TrainShards {
        #[arg(long)]
        corpus: PathBuf,
        /// Number of private shards.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, default_value_t = DEFAULT_SMOOTHING)]
        smoothing: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Share of documents for the public model.
        #[arg(long, default_value_t = 0.04)]
        public_fraction: f64,
        /// Share of documents held out as `eval.txt`.
        #[arg(long, default_value_t = 0.1)]
        eval_fraction: f64,
        #[arg(long, default_value = "char")]
        tokenization: Tokenization,
        #[arg(long, default_value = "lines")]
        doc_mode: DocumentMode,
    },
    /// Decode every next-token query of an evaluation text.
    Decode {
        #[arg(long)]
        models: PathBuf,
        /// Defaults to the evaluation split saved with the models.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        doc_mode: Option<DocumentMode>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        max_queries: Option<u64>,
        #[arg(long, default_value = "sampled")]
        basis: PerplexityBasis,
    },
    /// Perplexities of the public model, each private model and their average.
    Evaluate {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        doc_mode: Option<DocumentMode>,
    },
    /// One decode run per value of a hyperparameter, written as CSV.
    Sweep {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        doc_mode: Option<DocumentMode>,
        /// Base config.
        #[arg(long)]
        config: PathBuf,
        /// threshold, top_k, beta, ensemble_size, screen_lambda_sigma or alpha.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated; screen_lambda_sigma takes lambda:sigma pairs.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Per-run ledgers and reports; defaults to `<out>.runs`.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        max_queries: Option<u64>,
        #[arg(long, default_value = "sampled")]
        basis: PerplexityBasis,
        /// Run concurrently with per-run derived seeds.
        #[arg(long)]
        parallel: bool,
    },
    /// Replay a ledger and audit its running totals.
    Account {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
    },
}

enum Failure {
    Core(Error),
    Audit(Value),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Value, Failure> {
    serde_json::to_value(value).map_err(|e| Failure::Core(e.into()))
}

fn run(cli: Cli) -> Result<Value, Failure> {
    match cli.command {
        Command::TrainShards {
            corpus,
            n,
            order,
            smoothing,
            seed,
            out_dir,
            public_fraction,
            eval_fraction,
            tokenization,
            doc_mode,
        } => {
            let manifest = cmd_train_shards(&TrainShardsArgs {
                corpus,
                n,
                order,
                smoothing,
                seed,
                out_dir,
                public_fraction,
                eval_fraction,
                tokenization,
                doc_mode,
            })?;
            to_json(&manifest)
        }
        Command::Decode {
            models,
            eval,
            doc_mode,
            config,
            ledger,
            report,
            max_queries,
            basis,
        } => {
            let report = cmd_decode(&DecodeArgs {
                models_dir: models,
                eval_path: eval,
                doc_mode,
                config_path: config,
                ledger_out: ledger,
                report_out: report,
                options: SessionOptions { max_queries, basis },
            })?;
            to_json(&report)
        }
        Command::Evaluate {
            models,
            eval,
            doc_mode,
        } => to_json(&cmd_evaluate(&models, eval.as_deref(), doc_mode)?),
        Command::Sweep {
            models,
            eval,
            doc_mode,
            config,
            param,
            values,
            out,
            run_dir,
            max_queries,
            basis,
            parallel,
        } => {
            let spec = SweepSpec::new(param, values, load_config(&config)?)?;
            let run_dir = run_dir.unwrap_or_else(|| {
                let mut name = out.clone().into_os_string();
                name.push(".runs");
                PathBuf::from(name)
            });
            let rows = cmd_sweep(&SweepArgs {
                spec,
                models_dir: models,
                eval_path: eval,
                doc_mode,
                out_csv: out,
                run_dir,
                options: SessionOptions { max_queries, basis },
                parallel,
            })?;
            to_json(&rows)
        }
        Command::Account {
            ledger,
            alpha,
            delta,
        } => {
            let summary = cmd_account(&ledger, alpha, delta)?;
            let value = to_json(&summary)?;
            if summary.mismatches.is_empty() {
                Ok(value)
            } else {
                Err(Failure::Audit(value))
            }
        }
    }
}

fn error_record(e: &Error) -> Value {
    let mut record = json!({ "error": e.kind(), "message": e.to_string() });
    match e {
        Error::Config { field, .. } => record["field"] = json!(field),
        Error::InvalidParameter { field, .. } => record["field"] = json!(field),
        Error::Parse { path, line, .. } => {
            record["path"] = json!(path);
            record["line"] = json!(line);
        }
        Error::Io { path, .. } => record["path"] = json!(path),
        _ => {}
    }
    record
}

fn print_json(value: &Value) {
    let text = serde_json::to_string_pretty(value).expect("JSON value");
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(value) => {
            print_json(&value);
            ExitCode::SUCCESS
        }
        Err(Failure::Core(e)) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(1)
        }
        Err(Failure::Audit(summary)) => {
            print_json(&summary);
            let count = summary["mismatches"].as_array().map_or(0, Vec::len);
            eprintln!(
                "{}",
                json!({ "error": "ledger_mismatch", "message": format!("{count} stored totals disagree with the replay") })
            );
            ExitCode::from(3)
        }
    }
}
