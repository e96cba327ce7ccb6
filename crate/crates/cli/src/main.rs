mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hopsum_core::metrics::RateMode;

/// Synthesize multi-hop compression training data and evaluate compressors.
///
/// Endpoints are resolved per role from command-line flags, then
/// HOPSUM_<ROLE>_URL / _MODEL / _TOKEN_VAR / _TIMEOUT, then the
/// `[endpoints.<role>]` section of --config, then the mock backend.
#[derive(Debug, Parser)]
#[command(name = "hopsum", version)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads over examples.
    #[arg(long, global = true, default_value_t = 4)]
    pub workers: usize,

    #[command(flatten)]
    pub endpoints: EndpointArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct EndpointArgs {
    #[arg(long, global = true)]
    pub composer_url: Option<String>,
    #[arg(long, global = true)]
    pub composer_model: Option<String>,
    #[arg(long, global = true)]
    pub propositionizer_url: Option<String>,
    #[arg(long, global = true)]
    pub propositionizer_model: Option<String>,
    #[arg(long, global = true)]
    pub scorer_url: Option<String>,
    #[arg(long, global = true)]
    pub scorer_model: Option<String>,
    #[arg(long, global = true)]
    pub compressor_url: Option<String>,
    #[arg(long, global = true)]
    pub compressor_model: Option<String>,
    #[arg(long, global = true)]
    pub reader_url: Option<String>,
    #[arg(long, global = true)]
    pub reader_model: Option<String>,
    /// Request timeout in seconds, for every endpoint.
    #[arg(long, global = true)]
    pub timeout: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split long articles into word-bounded documents.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Words per document.
        #[arg(long, default_value_t = 100)]
        limit: usize,
        /// Input rows are retrieval sets rather than bare documents.
        #[arg(long)]
        retrieval: bool,
    },
    /// Segment retrieved documents into propositions.
    Propositionize {
        #[arg(long)]
        retrieval: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Score document and proposition helpfulness for seed questions.
    Score {
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        retrieval: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Build the compression training set from seed questions.
    Synthesize(SynthesizeArgs),
    /// Re-run multi-hop validation over a candidates file.
    Validate {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        retrieval: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
    /// Turn records into compressor training pairs.
    BuildDataset {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Per-source, per-hop record counts and summary lengths.
    Stats {
        /// Record files; untagged records are filed under the file stem.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run the compressor over retrieved documents.
    Compress {
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        retrieval: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        chunk_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score predictions, or run readers over summaries and score them.
    Evaluate(EvaluateArgs),
    /// Merge record files from several sources into one training set.
    Merge {
        /// `LABEL=PATH`, at least twice.
        #[arg(long = "input", required = true, value_parser = parse_labeled)]
        inputs: Vec<(String, PathBuf)>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a deterministic synthetic corpus for offline runs.
    World {
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub examples: PathBuf,
    #[arg(long)]
    pub retrieval: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated hop counts; 1 keeps the seed questions.
    #[arg(long, value_delimiter = ',')]
    pub hops: Option<Vec<u32>>,
    #[arg(long)]
    pub max_hops: Option<u32>,
    #[arg(long)]
    pub attempts: Option<u32>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub empty_quota: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Stop after this many new examples; rerun with the same checkpoint
    /// to continue.
    #[arg(long)]
    pub stop_after: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Offline mode: score rows of {id, prediction, answers, input_words,
    /// output_words, hop_count}.
    #[arg(long, conflicts_with_all = ["examples", "retrieval"])]
    pub predictions: Option<PathBuf>,
    #[arg(long, requires = "retrieval")]
    pub examples: Option<PathBuf>,
    #[arg(long)]
    pub retrieval: Option<PathBuf>,
    /// Use precomputed summaries instead of calling the compressor.
    #[arg(long, conflicts_with_all = ["no_documents", "documents"])]
    pub summaries: Option<PathBuf>,
    /// Give the reader no context at all.
    #[arg(long, conflicts_with = "documents")]
    pub no_documents: bool,
    /// Give the reader the top-N documents uncompressed.
    #[arg(long)]
    pub documents: bool,
    /// `LABEL=URL` or `LABEL=URL,MODEL`; repeat for several readers.
    #[arg(long = "reader", value_parser = parse_reader)]
    pub readers: Vec<(String, String, Option<String>)>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub rate_mode: Option<RateModeArg>,
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also print the reports as CSV.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum RateModeArg {
    Corpus,
    RowMean,
}

impl From<RateModeArg> for RateMode {
    fn from(m: RateModeArg) -> Self {
        match m {
            RateModeArg::Corpus => RateMode::Corpus,
            RateModeArg::RowMean => RateMode::RowMean,
        }
    }
}

fn parse_labeled(s: &str) -> Result<(String, PathBuf), String> {
    let (label, path) = s.split_once('=').ok_or("expected LABEL=PATH")?;
    if label.is_empty() || path.is_empty() {
        return Err("expected LABEL=PATH".into());
    }
    Ok((label.to_string(), PathBuf::from(path)))
}

fn parse_reader(s: &str) -> Result<(String, String, Option<String>), String> {
    let (label, rest) = s.split_once('=').ok_or("expected LABEL=URL[,MODEL]")?;
    let (url, model) = match rest.split_once(',') {
        Some((u, m)) => (u, Some(m.to_string())),
        None => (rest, None),
    };
    if label.is_empty() || url.is_empty() {
        return Err("expected LABEL=URL[,MODEL]".into());
    }
    Ok((label.to_string(), url.to_string(), model))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hopsum: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
