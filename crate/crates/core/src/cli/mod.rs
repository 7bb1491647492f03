// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line experiment runner.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or format error, 4 plan error.

mod commands;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::plans::VariantKind;

pub use commands::{cmd_gen_model, cmd_info, cmd_run, cmd_similarity, cmd_sweep};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_PLAN: i32 = 4;

/// Environment variable overriding the default worker count.
pub const THREADS_ENV: &str = "LAYER_PAINTER_THREADS";

#[derive(Debug, Parser)]
#[command(name = "layer-painter", version, about = "Layer-intervention experiments on frozen transformers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score one variant on the selected tasks.
    Run(RunArgs),
    /// Score a grid of variants and emit CSV plus SVG charts.
    Sweep(SweepArgs),
    /// Average cosine similarity between layers, variance profile and layer grouping.
    Similarity(SimilarityArgs),
    /// Write a seeded random model in LPW1 format.
    GenModel(GenModelArgs),
    /// Print a variant's plan and depth.
    Info(InfoArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// LPW1 weight file.
    #[arg(long)]
    pub model: PathBuf,
    /// LPC1 tokenized corpus.
    #[arg(long, conflicts_with = "text", required_unless_present = "text")]
    pub corpus: Option<PathBuf>,
    /// Plain-text corpus, one sentence per line, byte-tokenized.
    #[arg(long)]
    pub text: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; defaults to LAYER_PAINTER_THREADS, then available cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    /// Comma-separated tasks: cloze, perplexity, mc<N>.
    #[arg(long, default_value = "cloze,perplexity,mc4", value_delimiter = ',')]
    pub tasks: Vec<String>,
    /// Items per task, taken from the first corpus sentences.
    #[arg(long, default_value_t = 64)]
    pub max_items: usize,
    /// Tokens per multiple-choice continuation.
    #[arg(long, default_value_t = 2)]
    pub choice_len: usize,
    /// Seed for multiple-choice distractors.
    #[arg(long, default_value_t = 0)]
    pub task_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct VariantArgs {
    #[arg(long, value_parser = parse_variant)]
    pub variant: VariantKind,
    /// Start layer N.
    #[arg(long)]
    pub start_layer: Option<usize>,
    /// Loop count K.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Random-order seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probe layer n for skip_single / switch_adjacent.
    #[arg(long)]
    pub probe_layer: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[command(flatten)]
    pub variant: VariantArgs,
    /// Seeds averaged for random_order (consecutive from --seed).
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub tasks: TaskArgs,
    /// Comma-separated variant kinds.
    #[arg(long, value_delimiter = ',', value_parser = parse_variant, required = true)]
    pub variants: Vec<VariantKind>,
    /// Start layers, e.g. `1-15` or `3,5,8`; default every valid N.
    #[arg(long, value_parser = parse_index_list)]
    pub start_layers: Option<IndexList>,
    /// Loop counts for looped_parallel / full_repeat; default 3 and 2,3.
    #[arg(long, value_parser = parse_index_list)]
    pub iterations: Option<IndexList>,
    /// Probe layers for skip_single / switch_adjacent; default all.
    #[arg(long, value_parser = parse_index_list)]
    pub probe_layers: Option<IndexList>,
    /// First random-order seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seeds averaged per random_order row.
    #[arg(long, default_value_t = crate::eval::DEFAULT_RANDOM_SEEDS)]
    pub seeds: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SimilarityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Corpus sentences used as samples.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    /// RMS norm, rotary positions, gated SiLU.
    Llama,
    /// LayerNorm, learned positions, GELU, biases.
    Gpt2,
}

#[derive(Debug, Clone, Args)]
pub struct GenModelArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Arch::Llama)]
    pub arch: Arch,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 16)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 32)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 256)]
    pub vocab: usize,
    #[arg(long, default_value_t = 64)]
    pub max_seq: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Zero every layer projection, making each layer an identity.
    #[arg(long)]
    pub zero_layers: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InfoArgs {
    /// Take the layer count from this LPW1 file.
    #[arg(long, conflicts_with = "layers", required_unless_present = "layers")]
    pub model: Option<PathBuf>,
    /// Layer count T.
    #[arg(long)]
    pub layers: Option<usize>,
    #[command(flatten)]
    pub variant: VariantArgs,
}

/// Indices parsed from `a-b` ranges and comma lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexList(pub Vec<usize>);

pub fn parse_index_list(s: &str) -> Result<IndexList, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad index `{t}`"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err("empty index list".into());
    }
    Ok(IndexList(out))
}

fn parse_variant(s: &str) -> Result<VariantKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Process exit code for an engine error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Plan(_) => EXIT_PLAN,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the command, returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Similarity(a) => cmd_similarity(a),
        Command::GenModel(a) => cmd_gen_model(a),
        Command::Info(a) => cmd_info(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_lists() {
        assert_eq!(parse_index_list("1-4").unwrap().0, vec![1, 2, 3, 4]);
        assert_eq!(parse_index_list("2,5-6, 9").unwrap().0, vec![2, 5, 6, 9]);
        assert!(parse_index_list("4-2").is_err());
        assert!(parse_index_list("x").is_err());
        assert!(parse_index_list("").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with_args(["layer-painter", "run", "--bogus"]), EXIT_USAGE);
        assert_eq!(main_with_args(["layer-painter", "info", "--layers", "8", "--variant", "sideways"]), EXIT_USAGE);
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(exit_code(&Error::Plan("x".into())), EXIT_PLAN);
        assert_eq!(exit_code(&Error::Format("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
    }
}
