//! `aak`: generate artificial anaphora data, build corpora, train and
//! evaluate the ranking model, and dump its internals.
//!
//! Exit codes: 0 success, 1 contract violation, 2 I/O or usage error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "aak", version, about = "Abstract anaphora resolution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut clauses out of parsed sentences to make anaphor/antecedent pairs.
    Generate(GenerateArgs),
    /// Build, inspect and clean instance files.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Train a model and keep the epoch with the best dev s@1.
    Train(TrainArgs),
    /// Score a test set with a model or a baseline.
    Eval(EvalArgs),
    /// Dump model internals.
    #[command(subcommand)]
    Inspect(InspectCommand),
    /// Merge result tables.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Bracketed trees: one file per document, or a directory of such files.
    #[arg(long)]
    pub trees: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub min_anaphs_len: usize,
    /// Document ids to skip, one per line.
    #[arg(long)]
    pub exclude_ids: Option<PathBuf>,
    /// Substitution rules as JSON; the standard table when absent.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Drop punctuation directly around the removed clause.
    #[arg(long)]
    pub drop_adjacent_punct: bool,
    /// Keep -NONE- empty elements of the treebank.
    #[arg(long)]
    pub keep_empty_elements: bool,
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Turn pairs (with their trees) or annotated records into instances.
    Build(BuildArgs),
    /// Print corpus statistics as JSON.
    Stats(StatsArgs),
    /// Re-run de-duplication, filtering and down-sampling on instances.
    Dedup(DedupArgs),
}

#[derive(Args)]
pub struct BuildArgs {
    /// Pairs written by `generate`.
    #[arg(long, requires = "trees", conflicts_with_all = ["annotated", "shell_nouns"])]
    pub pairs: Option<PathBuf>,
    /// The trees the pairs were generated from.
    #[arg(long)]
    pub trees: Option<PathBuf>,
    #[arg(long)]
    pub keep_empty_elements: bool,
    /// Annotated anaphors with antecedents and parsed sentences (JSONL).
    #[arg(long, conflicts_with = "shell_nouns")]
    pub annotated: Option<PathBuf>,
    /// Cataphoric shell-noun sentences (JSONL).
    #[arg(long)]
    pub shell_nouns: Option<PathBuf>,
    #[command(flatten)]
    pub finalize: FinalizeArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FinalizeArgs {
    /// Keep degenerate and ambiguous instances, as for a test set.
    #[arg(long)]
    pub test: bool,
    /// Sample negatives down to this many candidates per instance.
    #[arg(long)]
    pub max_candidates: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DedupArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub finalize: FinalizeArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Word vectors in GloVe text format, dimension `d_word`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Baseline {
    Tag,
    Ps,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "baseline")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_parser = ["all", "nominal", "pronominal"])]
    pub subset: Option<String>,
    /// Score a baseline instead of a model.
    #[arg(long, value_enum, conflicts_with = "model")]
    pub baseline: Option<Baseline>,
    /// Accept a candidate only within one token edit, without the
    /// punctuation allowance.
    #[arg(long)]
    pub strict: bool,
    /// Row name; the model's ablation name by default.
    #[arg(long)]
    pub variant: Option<String>,
    /// Results table (TSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Ranked candidates per instance (JSONL).
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Subcommand)]
enum InspectCommand {
    /// How much each bi-LSTM output changes when the anaphor is moved.
    Sensitivity(SensitivityArgs),
    /// The joint representation of every candidate, with its rank.
    Joint(JointArgs),
}

#[derive(Args)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Whitespace-tokenized anaphoric sentence.
    #[arg(long)]
    pub sentence: String,
    /// First anaphor position as `start:end:head` (token indices).
    #[arg(long)]
    pub a: String,
    /// Second anaphor position as `start:end:head`.
    #[arg(long)]
    pub b: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct JointArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Only the first N instances.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Result tables to merge, in row order.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<aak::Error>() {
            return match e {
                aak::Error::Contract(_) | aak::Error::Shape { .. } | aak::Error::EmptyInput => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Corpus(CorpusCommand::Build(a)) => commands::corpus_build(a),
        Command::Corpus(CorpusCommand::Stats(a)) => commands::corpus_stats(a),
        Command::Corpus(CorpusCommand::Dedup(a)) => commands::corpus_dedup(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Inspect(InspectCommand::Sensitivity(a)) => commands::sensitivity(a),
        Command::Inspect(InspectCommand::Joint(a)) => commands::joint(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aak: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
