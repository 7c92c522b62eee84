mod commands;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tatrack_core::config::{AblationMode, TrackerConfig};
use tatrack_core::synth::SynthKind;

/// Exit statuses: 0 ok, 2 usage, 3 I/O, 4 shape or validation.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Invalid(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Invalid(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Invalid(m) => m,
        }
    }
}

impl From<tatrack_core::Error> for CliError {
    fn from(e: tatrack_core::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Invalid(e.to_string())
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "tatrack", version, about = "Target-aware Siamese tracker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Tracker settings. Precedence: flags, then `--config`, then defaults.
#[derive(Args, Debug, Default)]
pub struct TrackerArgs {
    /// Flat `key = value` file with tracker settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides one setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Channel selection: rand, regress or regress_rank.
    #[arg(long)]
    pub mode: Option<AblationMode>,
    /// Seed for rand mode.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl TrackerArgs {
    pub fn resolve(&self) -> CliResult<TrackerConfig> {
        let mut config = TrackerConfig::default();
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            config.set(k, v)?;
        }
        if let Some(mode) = self.mode {
            config.mode = mode;
        }
        if let Some(seed) = self.seed {
            config.seed = Some(seed);
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Track a sequence and write one box per frame.
    Track {
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        tracker: TrackerArgs,
        /// Initial box `x,y,w,h` (1-indexed); defaults to the first ground-truth line.
        #[arg(long)]
        init: Option<String>,
        /// Box file to write.
        #[arg(long)]
        out: PathBuf,
        /// Sequence directory with `img/` frames.
        sequence: PathBuf,
    },
    /// Evaluate every sequence under a dataset directory.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        tracker: TrackerArgs,
        /// Sequences tracked concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Directory for report.json and summary.csv.
        #[arg(long)]
        out: PathBuf,
        dataset: PathBuf,
    },
    /// Dump per-channel importance scores for a target.
    Importance {
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        tracker: TrackerArgs,
        /// Target box `x,y,w,h` (1-indexed).
        #[arg(long)]
        bbox: String,
        #[arg(long)]
        out: PathBuf,
        frame: PathBuf,
    },
    /// Generate a synthetic sequence with exact ground truth.
    Synth {
        #[arg(long)]
        kind: SynthKind,
        #[arg(long, default_value_t = 30)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Relative growth per frame for zoom.
        #[arg(long)]
        growth: Option<f64>,
        /// Initial square side in pixels.
        #[arg(long)]
        side: Option<f64>,
        /// Pixels per frame for translate and clutter.
        #[arg(long)]
        speed: Option<f64>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw boxes onto the frames of a sequence.
    Render {
        /// Predicted boxes, one `x,y,w,h` line per frame.
        #[arg(long)]
        boxes: PathBuf,
        /// Also draw the ground truth.
        #[arg(long)]
        gt: bool,
        /// Also write channel-averaged conv4_3 maps (needs --weights).
        #[arg(long)]
        features: bool,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        sequence: PathBuf,
    },
    /// Write a TADTW1 file with seeded random weights.
    RandomWeights {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the backbone against exporter fixtures.
    Parity {
        #[arg(long)]
        weights: PathBuf,
        /// Largest accepted max-abs deviation.
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        fixtures: PathBuf,
    },
    /// Print the effective tracker settings.
    ShowConfig {
        #[command(flatten)]
        tracker: TrackerArgs,
    },
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Track {
            weights,
            tracker,
            init,
            out,
            sequence,
        } => commands::track(&weights, &tracker, init.as_deref(), &out, &sequence),
        Command::Eval {
            weights,
            tracker,
            jobs,
            out,
            dataset,
        } => commands::eval(&weights, &tracker, jobs, &out, &dataset),
        Command::Importance {
            weights,
            tracker,
            bbox,
            out,
            frame,
        } => commands::importance(&weights, &tracker, &bbox, &out, &frame),
        Command::Synth {
            kind,
            frames,
            seed,
            growth,
            side,
            speed,
            width,
            height,
            out,
        } => {
            let mut spec = tatrack_core::synth::SynthSpec::new(kind, frames, seed);
            spec.growth = growth.unwrap_or(spec.growth);
            spec.side = side.unwrap_or(spec.side);
            spec.speed = speed.unwrap_or(spec.speed);
            spec.width = width.unwrap_or(spec.width);
            spec.height = height.unwrap_or(spec.height);
            commands::synth(&spec, &out)
        }
        Command::Render {
            boxes,
            gt,
            features,
            weights,
            out,
            sequence,
        } => render::render(&sequence, &boxes, gt, features, weights.as_deref(), &out),
        Command::RandomWeights { seed, out } => commands::random_weights(seed, &out),
        Command::Parity {
            weights,
            tolerance,
            fixtures,
        } => commands::parity(&weights, tolerance, &fixtures),
        Command::ShowConfig { tracker } => {
            print!("{}", tracker.resolve()?.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
