mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dlmdec", version, about = "CTC decoding with LM and denoising-LM fusion")]
pub struct Cli {
    /// Vocabulary file: an `#eos <id>` header, then one token per line.
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    /// Seed for every random choice; overrides an experiment config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 12)]
    pub beam: usize,
    /// Hypotheses kept per utterance where a command writes n-best lists.
    #[arg(long, global = true, default_value_t = 1)]
    pub nbest: usize,
    /// Scales file `{"lambda": .., "prior_rel": ..}`.
    #[arg(long, global = true)]
    pub scales: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Merge runs of frames whose argmax exceeds this probability.
    #[arg(long, global = true)]
    pub soft_collapse: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a corpus and its lattices; write vocabulary, LM text,
    /// confusion, dev/test lattices and references.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode lattices with one decision rule.
    Decode {
        #[arg(long, value_parser = parse_decoder)]
        decoder: dlm_decode::decoders::DecoderKind,
        #[arg(long)]
        lattices: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the scored candidate list the rule would rescore instead of
        /// its decision.
        #[arg(long)]
        candidates: bool,
        #[command(flatten)]
        models: ModelArgs,
    },
    /// Pick the best entry of each scored candidate list.
    Rescore {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, value_enum)]
        channel: ModelChannel,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search fusion scales on scored candidate lists.
    Tune {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        #[arg(long, value_enum)]
        channel: ModelChannel,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score hypotheses against references.
    Eval {
        #[arg(long)]
        hyps: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        /// Candidate lists for the oracle error rate.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Uncorrected hypotheses for the correction confusion counts.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corrupt reference token sequences into noisy DLM inputs.
    Corrupt {
        #[arg(long)]
        refs: PathBuf,
        /// Corruption preset: baseline, low, medium or high.
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Sample hypotheses from these lattices instead of substituting tokens.
        #[arg(long)]
        lattices: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract dense top-k DLM inputs from lattices.
    DenseExtract {
        #[arg(long)]
        lattices: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the label prior as the mean posterior over all frames.
    PriorEstimate {
        #[arg(long, required = true, num_args = 1..)]
        lattices: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full synthetic experiment and write its report.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChannel {
    Lm,
    Dlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DlmKind {
    Copy,
    Channel,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Whitespace-separated training text for the n-gram LM.
    #[arg(long)]
    pub lm_text: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub lm_order: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lm_add_k: f64,
    #[arg(long, value_enum, default_value_t = DlmKind::Channel)]
    pub dlm: DlmKind,
    #[arg(long, default_value_t = 0.5)]
    pub copy_weight: f64,
    #[arg(long, default_value_t = 0.01)]
    pub noise_weight: f64,
    #[arg(long, default_value_t = 0.1)]
    pub smoothing: f64,
    /// Confusion matrix JSON for the channel DLM.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long, default_value_t = dlm_decode::decoders::DEFAULT_ASR_NBEST)]
    pub asr_nbest: usize,
    #[arg(long, default_value_t = 12)]
    pub dlm_nbest: usize,
}

fn parse_decoder(s: &str) -> Result<dlm_decode::decoders::DecoderKind, String> {
    s.parse().map_err(|e: dlm_decode::Error| e.to_string())
}

/// Bad flag combinations detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    if let Some(e) = err.downcast_ref::<dlm_decode::Error>() {
        return if e.is_data_error() { EXIT_DATA } else { EXIT_INTERNAL };
    }
    if err.downcast_ref::<std::io::Error>().is_some() || err.downcast_ref::<serde_json::Error>().is_some() {
        return EXIT_DATA;
    }
    EXIT_INTERNAL
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
