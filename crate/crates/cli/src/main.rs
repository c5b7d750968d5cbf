//! `lexfuse`: dictionary-fused neural machine translation from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lexfuse::model::Variant;

#[derive(Parser, Debug)]
#[command(name = "lexfuse", version, about = "Neural MT with a hot-swappable bilingual dictionary")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run settings; each flag overrides the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    /// Config file of `key = value` lines (default: $LEXFUSE_CONFIG).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train_src: Option<PathBuf>,
    #[arg(long)]
    pub train_tgt: Option<PathBuf>,
    #[arg(long)]
    pub dev_src: Option<PathBuf>,
    #[arg(long)]
    pub dev_tgt: Option<PathBuf>,
    /// Dictionary TSV used for training and dev decoding.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub lexbar: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Word-align a parallel corpus (both directions, intersected); writes Pharaoh links.
    Align {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        iterations: usize,
        /// Refine Model 1 with this many HMM iterations.
        #[arg(long)]
        hmm: Option<usize>,
    },
    /// Count aligned word pairs into a dictionary TSV.
    DictBuild {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        links: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        min_count: u64,
    },
    /// Train a model; writes a checkpoint and a per-epoch metric log.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Metric log, one JSON object per epoch.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Translate a file with a checkpoint and an optional dictionary.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        dict: Option<PathBuf>,
        /// Per-token trace, one JSON object per line.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long)]
        threshold: Option<f64>,
        /// PG copy: argmax of the mixed distribution instead of hard gating.
        #[arg(long)]
        soft_copy: bool,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Join BPE pieces in the output.
        #[arg(long)]
        merge_back: bool,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Eval {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Add-one smoothing for orders above one.
        #[arg(long)]
        smooth: bool,
        #[arg(long)]
        json: bool,
    },
    /// Vocabulary and dictionary coverage per LexBar.
    Coverage {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 2, 3, 4, 6, 8, 12, 16, 24, 32])]
        lexbars: Vec<u64>,
        #[arg(long)]
        json: bool,
    },
    /// Merge dictionaries; counts of shared pairs are summed.
    DictMerge {
        #[arg(long)]
        base: PathBuf,
        #[arg(long, required = true)]
        add: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn BPE merges from one or more files.
    BpeLearn {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        merges: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment a file with learned BPE merges.
    BpeApply {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Retrain and evaluate once per LexBar value.
    SweepLexbar {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        test_src: Option<PathBuf>,
        #[arg(long)]
        test_tgt: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![2u64, 3, 4, 6, 8, 12, 16, 24, 32])]
        lexbars: Vec<u64>,
        /// Receives one checkpoint per LexBar, the table and the plot data.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Show a translation trace, or model and dictionary sizes.
    Inspect {
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Only this sentence of the trace.
        #[arg(long)]
        sentence: Option<usize>,
        #[arg(long)]
        size: bool,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dict: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Write the synthetic bijective-lexicon corpus.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
