mod commands;
mod failure;
mod job;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fxnorm_core::evaluation::{LossVariant, MapeAveraging};
use fxnorm_core::pipeline::Stage;
use fxnorm_core::reverb::AugmentMode;
use fxnorm_core::wav::BitDepth;
use fxnorm_core::StemType;

use job::CONFIG_ENV;

#[derive(Parser, Debug)]
#[command(name = "fxnorm", version, about = "Effect normalization of multitrack stems and mix evaluation")]
struct Cli {
    /// JSON or TOML job config; unspecified fields take their defaults.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores). 1 gives a fully sequential run.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Dataset root: one directory per song holding <stem>.wav files.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Directory of per-stem-type profiles.
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Comma-separated stem types.
    #[arg(long, value_delimiter = ',')]
    stems: Vec<StemType>,
    /// Resample inputs to the session rate instead of refusing them.
    #[arg(long)]
    resample: bool,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Train,
    Inference,
}

impl From<ModeArg> for AugmentMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Train => AugmentMode::Train,
            ModeArg::Inference => AugmentMode::Inference,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum DepthArg {
    Float32,
    Pcm16,
    Pcm24,
}

impl From<DepthArg> for BitDepth {
    fn from(d: DepthArg) -> Self {
        match d {
            DepthArg::Float32 => BitDepth::Float32,
            DepthArg::Pcm16 => BitDepth::Pcm16,
            DepthArg::Pcm24 => BitDepth::Pcm24,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Measure corpus-average effect profiles, one file per stem type.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Normalize every song of a dataset toward the profiles.
    Normalize {
        #[command(flatten)]
        common: Common,
        /// Output root; mirrors the dataset layout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train adds one reverb send; inference adds a pre-reverb send first.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Seed of the reverb draws; equal seeds give identical outputs.
        #[arg(long)]
        seed: Option<u64>,
        /// Stage to leave out (repeatable): reverb, eq, drc, panning, loudness.
        #[arg(long)]
        skip: Vec<Stage>,
        /// Impulse-response directory for reverb augmentation.
        #[arg(long)]
        ir_library: Option<PathBuf>,
        /// Also write each stage's output under <song>/stages/.
        #[arg(long)]
        keep_intermediates: bool,
        /// Sample encoding of written files.
        #[arg(long, value_enum)]
        bit_depth: Option<DepthArg>,
    },
    /// Feature errors of candidate mixes against reference mixes.
    Evaluate {
        /// Directory of candidate songs (<song>/mixture.wav or <song>.wav).
        #[arg(long)]
        candidate: PathBuf,
        /// Directory of reference songs, matched to candidates by song id.
        #[arg(long)]
        reference: PathBuf,
        /// Also write evaluation.csv, evaluation.json and job.json here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// How song errors combine: per-song or joint.
        #[arg(long, default_value = "per-song")]
        averaging: MapeAveraging,
    },
    /// Stereo-invariant spectral loss of an estimate against a target.
    Loss {
        /// Reference stereo WAV.
        #[arg(long)]
        target: PathBuf,
        /// Estimated stereo WAV of the same length and rate.
        #[arg(long)]
        estimate: PathBuf,
        /// a: spectral convergence + log-magnitude L1; b: magnitude L2 + log-magnitude L1.
        #[arg(long, default_value = "a")]
        variant: LossVariant,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Write a synthetic multitrack corpus and impulse-response library.
    Fixtures {
        /// Writes <out>/dataset and <out>/irs.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        songs: usize,
        #[arg(long, default_value_t = 6.0)]
        seconds: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Print the effective job config as JSON.
    Config,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fxnorm: {f}");
            f.exit_code()
        }
    }
}
