use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use solar_core::SolarError;

mod commands;
mod config;
mod verify;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Extreme multilabel retrieval with sparse random label codes.
#[derive(Debug, Parser)]
#[command(name = "solar", version, about)]
struct Cli {
    /// Log more (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train all chunk classifiers and write a model directory.
    Train {
        /// Flat key = value config file (see `solar template`).
        #[arg(long)]
        config: PathBuf,
        /// Creation time recorded in the manifest (unix seconds); defaults to now.
        #[arg(long)]
        timestamp: Option<u64>,
    },
    /// Write batch predictions, one line per document.
    Predict {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Buckets kept per chunk.
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        /// sparse | full
        #[arg(long, default_value = "sparse")]
        mode: String,
        /// Output file; `-` for stdout.
        #[arg(long, default_value = "-")]
        output: PathBuf,
    },
    /// Precision and recall at k on a labelled corpus.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 10)]
        m: usize,
        /// Precision cut-offs.
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        ks: Vec<usize>,
        /// Recall cut-offs.
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,100")]
        recall_ks: Vec<usize>,
        /// sparse | full
        #[arg(long, default_value = "sparse")]
        mode: String,
        /// Emit one tab-separated header and row instead of key = value lines.
        #[arg(long)]
        tsv: bool,
    },
    /// Train and evaluate every (B, K) pair, evaluating each at every m.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Buckets per chunk.
        #[arg(long = "b", value_delimiter = ',', required = true)]
        b_list: Vec<usize>,
        /// Number of chunks.
        #[arg(long = "k", value_delimiter = ',', required = true)]
        k_list: Vec<usize>,
        #[arg(long = "m", value_delimiter = ',', required = true)]
        m_list: Vec<usize>,
        /// Held-out corpus; overrides `test_corpus` from the config.
        #[arg(long)]
        test_corpus: Option<PathBuf>,
    },
    /// Self-contained correctness checks, optionally against a saved model.
    Verify {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        tol: verify::Tolerances,
    },
    /// Persist the inverted index next to a saved model.
    BuildIndex {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Write a synthetic corpus whose labels are separable by private tokens.
    GenCorpus {
        #[arg(long, default_value_t = 2000)]
        labels: usize,
        #[arg(long, default_value_t = 20)]
        docs_per_label: usize,
        /// Independent sample index (use different values for train and test).
        #[arg(long, default_value_t = 0)]
        split: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        private_tokens: usize,
        #[arg(long, default_value_t = 3)]
        tokens_per_doc: usize,
        #[arg(long, default_value_t = 1000)]
        noise_vocab: usize,
        #[arg(long, default_value_t = 2)]
        noise_per_doc: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Print a documented training config template.
    Template,
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<SolarError>()) {
        Some(e) if e.is_validation() => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Train { config, timestamp } => commands::train(&config, timestamp),
        Command::Predict {
            manifest,
            corpus,
            m,
            top_k,
            mode,
            output,
        } => commands::predict(&manifest, &corpus, m, top_k, &mode, &output),
        Command::Eval {
            manifest,
            corpus,
            m,
            ks,
            recall_ks,
            mode,
            tsv,
        } => commands::eval(&manifest, &corpus, m, &ks, &recall_ks, &mode, tsv),
        Command::Sweep {
            config,
            b_list,
            k_list,
            m_list,
            test_corpus,
        } => commands::sweep(&config, &b_list, &k_list, &m_list, test_corpus.as_deref()),
        Command::Verify { manifest, tol } => verify::run(manifest.as_deref(), &tol),
        Command::BuildIndex { manifest } => commands::build_index(&manifest),
        Command::GenCorpus {
            labels,
            docs_per_label,
            split,
            seed,
            private_tokens,
            tokens_per_doc,
            noise_vocab,
            noise_per_doc,
            output,
        } => commands::gen_corpus(
            solar_core::SynthConfig {
                num_labels: labels,
                private_tokens,
                tokens_per_doc,
                noise_vocab,
                noise_per_doc,
                seed,
            },
            docs_per_label,
            split,
            &output,
        ),
        Command::Template => {
            print!("{}", config::template());
            Ok(ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
