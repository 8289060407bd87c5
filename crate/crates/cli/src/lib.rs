//! Command-line runner: ingest, index, query, evaluate, probe and ablate.
//!
//! Every command reads one JSON [`RunConfig`] (with
//! `--set` overrides) and writes its reports into the output directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::QuerySource;
use crate::config::{Overrides, RunConfig};
pub use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "cbir",
    version,
    about = "Exact cosine retrieval benchmarks over embedding files"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override one config value, e.g. `--set knn.k_grid=[1,5]`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,

    /// Worker threads for all parallel work.
    #[arg(long, env = "CBIR_WORKERS", global = true)]
    pub workers: Option<usize>,

    /// Seed for every seeded step; overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory for reports.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply preparation rules to the manifest.
    Ingest,
    /// Build the search index from embeddings and manifest.
    BuildIndex,
    /// Print the most similar index entries for one query.
    Query {
        /// Record id of the query (looked up in the index, then the embedding file).
        #[arg(long, conflicts_with = "vector_file", required_unless_present = "vector_file")]
        id: Option<u64>,
        /// Query vector: an embedding file (first record) or a JSON array.
        #[arg(long)]
        vector_file: Option<PathBuf>,
        #[arg(short, default_value_t = commands::DEFAULT_QUERY_N)]
        n: usize,
    },
    /// Micro/macro precision@N of the query split against the index.
    Evaluate,
    /// kNN and linear probes on train/val/test.
    Probe,
    /// Index-size ablation curve.
    Ablate,
    /// Write a synthetic Gaussian-cluster corpus.
    Synth,
}

impl Cli {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            sets: self.sets.clone(),
            seed: self.seed,
            workers: self.workers,
            output: self.output.clone(),
        }
    }
}

/// Runs `f` on a pool with the configured worker count.
pub fn with_workers<T: Send>(config: &RunConfig, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::InvalidConfig(format!("cannot start {:?} workers: {e}", config.workers)))?;
    Ok(pool.install(f))
}

/// Executes one parsed command line; returns what should go to stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let config = RunConfig::load(cli.config.as_deref(), &cli.overrides())?;
    with_workers(&config, || run_command(&cli.command, &config))?
}

fn run_command(command: &Command, config: &RunConfig) -> Result<String> {
    let dir = config.paths.output_dir.display();
    Ok(match command {
        Command::Ingest => {
            let log = commands::cmd_ingest(config)?;
            format!(
                "ingest: {} of {} records kept ({} duplicates, {} multi-label dropped) -> {dir}\n",
                log.retained_count, log.input_count, log.duplicates_dropped, log.multi_label_dropped
            )
        }
        Command::BuildIndex => {
            let s = commands::cmd_build_index(config)?;
            format!(
                "build-index: {} entries, {} classes, D={} -> {}\n",
                s.entries,
                s.classes,
                s.dimension,
                config.index_path().display()
            )
        }
        Command::Query { id, vector_file, n } => {
            let source = match (id, vector_file) {
                (Some(id), _) => QuerySource::RecordId(*id),
                (None, Some(path)) => QuerySource::VectorFile(path.clone()),
                (None, None) => return Err(CliError::InvalidConfig("query needs --id or --vector-file".into())),
            };
            commands::format_hits(&commands::cmd_query(config, &source, *n)?)
        }
        Command::Evaluate => {
            let m = commands::cmd_evaluate(config)?;
            let mut out = format!(
                "evaluate: {} queries against {} entries -> {dir}\n",
                m.query_count, m.index_count
            );
            for (n, micro) in &m.p_at_n_micro {
                out.push_str(&format!(
                    "  P@{n:<3} micro {micro:.4}  macro {:.4}\n",
                    m.p_at_n_macro[n]
                ));
            }
            out
        }
        Command::Probe => {
            let r = commands::cmd_probe(config)?;
            format!(
                "probe: kNN (k={}) F1 macro {:.4}, AUPRC macro {:.4}; linear (epoch {}) F1 macro {:.4}, AUPRC macro {:.4} -> {dir}\n",
                r.knn.best_k,
                r.knn.scores.f1_macro,
                r.knn.scores.auprc_macro,
                r.linear.best_epoch,
                r.linear.scores.f1_macro,
                r.linear.scores.auprc_macro
            )
        }
        Command::Ablate => {
            let s = commands::cmd_ablate(config)?;
            let mut out = format!(
                "ablate: {} classes, {} queries -> {dir}\n",
                s.curve.eligible_classes.len(),
                s.curve.query_count
            );
            for m in &s.curve.means {
                out.push_str(&format!(
                    "  N={:<5} P@1 mean {:.4} (min {:.4}, max {:.4})\n",
                    m.n, m.mean, m.min, m.max
                ));
            }
            out
        }
        Command::Synth => {
            let (emb, man) = commands::cmd_synth(config)?;
            format!("synth: wrote {} and {}\n", emb.display(), man.display())
        }
    })
}
