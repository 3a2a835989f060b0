//! `kdspd`: corpus generation, distillation, indexing, search, merging,
//! evaluation, parallel-document analysis and zero-shot extension.
//!
//! Every command writes its outputs plus a `manifest.json` into `--out`.
//! Exit status: 0 on success, 1 on invalid input or configuration, 2 on a
//! numerical failure.

mod chart;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kdspd::parallelism::{threads_from_env, with_threads};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "kdspd",
    version,
    about = "Knowledge-distilled soft prompt decoding for multilingual retrieval"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Where the teacher comes from: an embedding file or the synthetic map.
#[derive(Args, Debug, Clone, Serialize)]
pub struct TeacherArgs {
    /// Teacher embedding table (SPDE file).
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Use the deterministic synthetic teacher.
    #[arg(long)]
    pub synthetic_teacher: bool,
    #[arg(long, default_value_t = 32)]
    pub teacher_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub teacher_seed: u64,
    #[arg(long, default_value = "teacher")]
    pub teacher_salt: String,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cipher-language corpus.
    GenCorpus {
        /// JSON corpus spec; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distill the teacher into a student on a corpus's bitext.
    Train {
        /// JSON training config (schema 1).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        teacher: TeacherArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a collection into a dense index, with a student checkpoint or
    /// with the teacher.
    Index {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        collection: PathBuf,
        /// Vocabulary file; required with --checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Keep only documents in these languages (comma separated).
        #[arg(long, value_delimiter = ',')]
        languages: Vec<String>,
        /// Passage window in tokens; defaults to the model's input length.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[command(flatten)]
        teacher: TeacherArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank an index for each query using teacher query vectors.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[command(flatten)]
        teacher: TeacherArgs,
        #[arg(long, default_value_t = 1000)]
        k: usize,
        #[arg(long, default_value = "kdspd")]
        tag: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge per-language runs into one run.
    Merge {
        /// `rr` (round-robin) or `score` (min-max normalized).
        #[arg(long, default_value = "rr")]
        strategy: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "merged")]
        tag: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Score a run against qrels; with --compare, add paired t-tests.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "map,ndcg@10,p@10,mrr,r@100")]
        metrics: Vec<String>,
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score and rank spread across the translations of each relevant document.
    AnalyzeParallel {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        groups: PathBuf,
        #[arg(long, default_value_t = 1000)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add an unseen language to a checkpoint by averaging trained languages.
    Zeroshot {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        new_lang: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep each relevant document in one language, most of them in a
    /// per-query primary language.
    BiasedSplit {
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long)]
        groups: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        languages: Vec<String>,
        #[arg(long, default_value_t = 0.6)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the command recorded in a manifest, writing to a new directory.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let threads = match threads_from_env() {
        Ok(n) => n,
        Err(e) => return fail(&e),
    };
    let result = with_threads(threads, || commands::run(cli.command, &argv[1..])).and_then(|r| r);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &kdspd::Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_numeric() { 2 } else { 1 })
}
