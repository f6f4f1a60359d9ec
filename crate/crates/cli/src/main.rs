//! `dwim` — generate tasks, collect workflows, flag actions, build mask
//! datasets, evaluate losses and summarize artifacts.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dwim_core::model::{GenerationMode, MaskVariant};

#[derive(Debug, Parser)]
#[command(name = "dwim", version, about = "Discrepancy-aware workflow collection and instruct-masking datasets")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; a manifest.json there lists everything written.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for episode collection.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate scene+task records.
    GenTasks {
        #[arg(long)]
        n: usize,
    },
    /// Run one episode per task and keep the accepted workflows.
    Collect {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Also write rejected workflows.
        #[arg(long)]
        include_rejected: bool,
    },
    /// Compute effectiveness flags for every action.
    Flag {
        #[arg(long)]
        workflows: PathBuf,
    },
    /// Build a masked-regeneration dataset.
    BuildDataset {
        #[arg(long)]
        workflows: PathBuf,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Task file; when given, each sample's instruction carries its question.
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Keep rejected workflows, emitting their samples with reward 0.
        #[arg(long)]
        include_rejected: bool,
    },
    /// Evaluate the reward-weighted objective with a toy scorer.
    EvalLoss {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "uniform")]
        scorer: ScorerArg,
        /// Vocabulary size for the uniform scorer; defaults to the distinct
        /// tokens of the dataset.
        #[arg(long)]
        vocab: Option<usize>,
        /// Plain mean NLL instead of the reward-weighted mean.
        #[arg(long)]
        unweighted: bool,
    },
    /// Summarize any artifact (tasks, workflows, flags or mask samples).
    Stats { artifact: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Standard,
    #[value(alias = "discrepancy-aware", alias = "discrepancy_aware")]
    Discrepancy,
    #[value(alias = "single_turn")]
    SingleTurn,
}

impl From<ModeArg> for GenerationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Standard => GenerationMode::Standard,
            ModeArg::Discrepancy => GenerationMode::DiscrepancyAware,
            ModeArg::SingleTurn => GenerationMode::SingleTurn,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    #[value(alias = "instruct_masking")]
    InstructMasking,
    #[value(alias = "random_masking")]
    RandomMasking,
    #[value(alias = "masking_w_rethink")]
    MaskingWRethink,
    #[value(alias = "naive_sft")]
    NaiveSft,
}

impl From<VariantArg> for MaskVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::InstructMasking => MaskVariant::InstructMasking,
            VariantArg::RandomMasking => MaskVariant::RandomMasking,
            VariantArg::MaskingWRethink => MaskVariant::MaskingWRethink,
            VariantArg::NaiveSft => MaskVariant::NaiveSft,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScorerArg {
    Uniform,
    Unigram,
    Oracle,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
