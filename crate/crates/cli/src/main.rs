mod commands;
mod summary;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "plf",
    version,
    about = "Phonological-feature bottleneck training and pathology analysis"
)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus (frames) or speaker-level histogram dataset.
    Synth(SynthArgs),
    /// Train a PLF network on a labeled corpus.
    Train(TrainArgs),
    /// Export frame-level PLF logits (and path-1 phone scores) per utterance.
    Extract(ExtractArgs),
    /// Phone error rate features against the corpus labels.
    Per(FeatureArgs),
    /// 7-bin PLF histogram features.
    Histogram(FeatureArgs),
    /// Cross-validated intelligibility regression or pathology classification.
    Crossval(CrossvalArgs),
    /// Correlation of PLF means and histogram bins with intelligibility.
    Analyze(AnalyzeArgs),
    /// Finite-difference check of the training gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SynthKind {
    /// Frame-level labeled utterances.
    Frames,
    /// Speaker-level histogram features with a known score dependency.
    Histogram,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// `demo`, `template` or a spec JSON path.
    #[arg(long, default_value = "demo")]
    spec: String,
    #[arg(long, value_enum, default_value = "frames")]
    kind: SynthKind,
    /// Full generator settings as JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    healthy: Option<usize>,
    #[arg(long)]
    utterances_per_speaker: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Speakers for `--kind histogram`.
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Corpus manifest CSV.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "demo")]
    spec: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Compression parameter E.
    #[arg(long)]
    compression: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    /// Disable path 2 (learnable scaling of the conversion matrix).
    #[arg(long)]
    no_scaling_matrix: bool,
    /// Disable path 3 (direct phone classification).
    #[arg(long)]
    no_direct_path: bool,
    #[arg(long)]
    no_augment: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Require the checkpoint to match this spec.
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FeatureArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Output CSV, one row per utterance.
    #[arg(long)]
    out: PathBuf,
    /// Phone symbol dropped from decoded and reference sequences.
    #[arg(long)]
    silence: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum FeatureSet {
    Per,
    Histogram,
    Both,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum TaskArg {
    Intelligibility,
    Pathology,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    #[arg(long, value_enum)]
    task: TaskArg,
    /// Speaker-level dataset manifest (speaker_id,feature_file,pathology,intelligibility).
    #[arg(long, conflicts_with_all = ["corpus", "checkpoint"], required_unless_present = "corpus")]
    dataset: Option<PathBuf>,
    /// Utterance corpus; features are extracted with --checkpoint and averaged per speaker.
    #[arg(long, requires = "checkpoint")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "histogram")]
    features: FeatureSet,
    #[arg(long)]
    silence: Option<String>,
    /// Only the training-mean / majority baseline.
    #[arg(long)]
    baseline_only: bool,
    #[arg(long)]
    stratify: bool,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    configurations: usize,
    /// Pass threshold on the maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Summary JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
