mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dda_core::report::Format;
use dda_core::{ErrorKind, Unit};

#[derive(Parser, Debug)]
#[command(name = "dda", version, about = "Dysarthric speech augmentation experiment harness")]
pub struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Table format for `report`.
    #[arg(long, global = true, default_value = "markdown")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct TextOpts {
    #[arg(long, default_value = "word")]
    pub unit: Unit,
    /// Keep letter case.
    #[arg(long)]
    pub keep_case: bool,
    /// Keep punctuation.
    #[arg(long)]
    pub keep_punctuation: bool,
}

#[derive(Args, Debug, Clone)]
pub struct CoverageOpts {
    /// Comma-separated n-gram orders.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub orders: Vec<usize>,
    /// Comma-separated weights, one per order.
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.5")]
    pub weights: Vec<f64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a manifest and print corpus statistics.
    LoadCheck {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        text: TextOpts,
    },
    /// N-gram coverage of target texts by a pool (one text per line).
    Coverage {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        cov: CoverageOpts,
        #[command(flatten)]
        text: TextOpts,
    },
    /// Greedy budgeted selection of candidate texts covering the target.
    Select {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        budget: usize,
        #[command(flatten)]
        cov: CoverageOpts,
        #[command(flatten)]
        text: TextOpts,
    },
    /// Train an n-gram LM from texts (one per line) or a manifest.
    LmTrain {
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        texts: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = dda_core::lm::DEFAULT_ORDER)]
        order: usize,
        #[arg(long, default_value_t = dda_core::lm::DEFAULT_SMOOTHING_K)]
        k: f64,
        #[command(flatten)]
        text: TextOpts,
    },
    /// Decode lattices (JSONL) with shallow fusion.
    Decode {
        #[arg(long)]
        lattices: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        /// Beam width; 0 keeps every hypothesis.
        #[arg(long, default_value_t = dda_core::decoder::DEFAULT_BEAM_WIDTH)]
        beam: usize,
        /// Comma-separated lambdas to sweep; needs --refs.
        #[arg(long, value_delimiter = ',', requires = "refs")]
        sweep: Option<Vec<f64>>,
        /// References as `id<TAB>text` lines.
        #[arg(long)]
        refs: Option<PathBuf>,
        #[command(flatten)]
        text: TextOpts,
    },
    /// Emit simulated lattices (JSONL) for a manifest's test utterances.
    Simulate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "baseline")]
        setting: dda_core::Setting,
        #[arg(long, default_value_t = 1.0)]
        coverage: f64,
        #[command(flatten)]
        text: TextOpts,
    },
    /// Align hypotheses to references (`id<TAB>text` files) and emit scores.
    Align {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        /// Attach speaker ids from this manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        text: TextOpts,
    },
    /// Aggregate score JSONL and optionally test against a second system.
    Stats {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "overall")]
        grouping: String,
        #[arg(long, default_value = "speaker")]
        weighting: String,
        /// Second system's scores over the same utterances.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        resamples: usize,
        #[command(flatten)]
        text: TextOpts,
    },
    /// Run the stepwise LOSO pipeline and emit trajectory JSONL.
    RunPipeline {
        #[arg(long)]
        manifest: PathBuf,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        parallelism: Option<usize>,
        /// `sim`, `cmd:<program> [args..]` or `tcp:<host:port>`.
        #[arg(long, default_value = "sim")]
        backend: String,
        /// Connections to an external backend.
        #[arg(long, default_value_t = 1)]
        pool: usize,
        /// Per-request timeout for external backends, in seconds.
        #[arg(long, default_value_t = 30)]
        timeout: u64,
        /// Evaluate every stage for every speaker.
        #[arg(long)]
        no_filtering: bool,
        #[command(flatten)]
        text: TextOpts,
    },
    /// Render trajectories or a results table.
    Report {
        #[arg(long, conflicts_with = "table", required_unless_present = "table")]
        trajectories: Option<PathBuf>,
        /// Severity-grouped rows instead of per-speaker columns; needs the manifest.
        #[arg(long, requires = "manifest")]
        by_severity: bool,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// A results table in JSON form.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Row to compute deltas against.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long)]
        precision: Option<usize>,
        #[command(flatten)]
        text: TextOpts,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<dda_core::Error>()) {
        Some(e) => match e.kind() {
            ErrorKind::Validation => 2,
            ErrorKind::Backend => 3,
            ErrorKind::Internal => 4,
        },
        None => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
