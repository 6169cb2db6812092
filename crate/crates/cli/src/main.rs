use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use srag_cli::commands::parse_run_arg;
use srag_cli::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "srag", version, about = "Retrieval-augmented QA experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// bm25, dense, bm25_dense_rerank or ideal.
    #[arg(long)]
    retriever: Option<String>,
    /// NO_RAG, RAG, SRAG_S or SRAG_D.
    #[arg(long)]
    variant: Option<String>,
    /// Number of context documents in the prompt.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&Overrides {
            retriever: self.retriever.clone(),
            variant: self.variant.clone(),
            top_k: self.top_k,
            output_dir: self.output_dir.clone(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the BM25 index and, with an embedder, the document vectors.
    Index(Common),
    /// Retrieve a ranked list for every question.
    Retrieve(Common),
    /// Answer every question under the configured variant.
    Generate(Common),
    /// Generate synthetic QA pairs from summary documents.
    Augment(Common),
    /// Score result files and test paired differences.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Result files as LABEL=PATH; defaults to this config's results.
        runs: Vec<String>,
    },
    /// Print the text table of a report.json.
    Report { path: PathBuf },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Index(c) => {
            let s = srag_cli::cmd_index(&c.load()?)?;
            println!(
                "indexed {} documents -> {} (sha256 {})",
                s.documents,
                s.sparse_path.display(),
                s.sparse_sha256
            );
            if let Some(p) = s.dense_path {
                println!("document vectors -> {}", p.display());
            }
        }
        Command::Retrieve(c) => {
            let s = srag_cli::cmd_retrieve(&c.load()?)?;
            println!(
                "retrieved top-{} for {} questions -> {}",
                s.depth,
                s.questions,
                s.path.display()
            );
        }
        Command::Generate(c) => {
            let s = srag_cli::cmd_generate(&c.load()?)?;
            println!(
                "{} instances, {} errors, accuracy {:.4} -> {}",
                s.instances,
                s.errors,
                s.accuracy,
                s.path.display()
            );
        }
        Command::Augment(c) => {
            let s = srag_cli::cmd_augment(&c.load()?)?;
            println!(
                "{} pairs from {} summary documents -> {}",
                s.pairs,
                s.documents,
                s.path.display()
            );
            if !s.failures.is_empty() {
                eprintln!("{} documents failed:", s.failures.len());
                for (doc, e) in &s.failures {
                    eprintln!("  {doc}: {e}");
                }
            }
        }
        Command::Evaluate { common, runs } => {
            let cfg = common.load()?;
            let runs: Vec<_> = runs.iter().map(|r| parse_run_arg(r)).collect();
            let report = srag_cli::cmd_evaluate(&cfg, &runs)?;
            print!("{}", srag_core::eval::render_text(&report.runs, &report.significance));
        }
        Command::Report { path } => {
            print!(
                "{}",
                srag_cli::cmd_report(&path).with_context(|| format!("reading {}", path.display()))?
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // typed errors already embed their source; print a cause only when it adds text
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
