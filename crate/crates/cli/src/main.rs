mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowchroma_core::inference::AssignmentRule;

/// Environment variable naming the default `train --config` file.
pub const CONFIG_ENV: &str = "FLOWCHROMA_CONFIG";

/// Exit status for invalid command lines.
const USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(
    name = "flowchroma",
    version,
    about = "Video colorization with recurrent temporal context"
)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset of PNG frame directories plus manifest.json.
    Generate(GenerateArgs),
    /// Train a model on the train-tagged clips of a dataset.
    Train(Box<TrainArgs>),
    /// Colorize a directory of frames with a trained checkpoint.
    Colorize(ColorizeArgs),
    /// Compare two checkpoints on the eval-tagged clips of a dataset.
    Evaluate(EvaluateArgs),
    /// Check analytic gradients against central finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// JSON scene template (has a `palette`) or a single concrete scene.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Clip i is rendered with seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Share of clips tagged `eval`; the rest are tagged `train`.
    #[arg(long, default_value_t = 0.2)]
    eval_fraction: f64,
}

/// Options not given here fall back to the config file, then to defaults.
/// A flag always wins over the same key in the config file.
#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON run config (default: the file named by $FLOWCHROMA_CONFIG, if set).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory or manifest file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Checkpoint to write when training ends.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from a checkpoint; the model settings come from it.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// NDJSON log file (default: stderr).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    global_dim: Option<usize>,
    #[arg(long)]
    lstm_hidden: Option<usize>,
    /// Scale intermediate layer widths with --channels.
    #[arg(long)]
    desk_scale: bool,
    /// Train the per-frame baseline without the LSTM.
    #[arg(long)]
    ablate_lstm: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    clip_grad_norm: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    window_stride: Option<usize>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum Rule {
    LastWindow,
    MostContext,
}

impl From<Rule> for AssignmentRule {
    fn from(r: Rule) -> Self {
        match r {
            Rule::LastWindow => AssignmentRule::LastWindow,
            Rule::MostContext => AssignmentRule::MostContext,
        }
    }
}

#[derive(Args, Debug)]
pub struct ColorizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of frame_NNNNN.png files; only their luminance is used.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, value_enum, default_value_t = Rule::LastWindow)]
    rule: Rule,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Directory for report.json and report.txt.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "eval")]
    tag: String,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Largest |ΔL| (Lab units) for a pixel to count as static.
    #[arg(long, default_value_t = flowchroma_core::eval::DEFAULT_STATIC_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = Rule::LastWindow)]
    rule: Rule,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum InjectedFault {
    ConvBackwardSignFlip,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// Comma-separated subset of checks; `model` is the end-to-end check.
    #[arg(long, value_delimiter = ',')]
    ops: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = flowchroma_core::gradcheck::DEFAULT_STEP)]
    step: f64,
    #[arg(long, default_value_t = 3)]
    window: usize,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 16)]
    global_dim: usize,
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<InjectedFault>,
}

/// A failed command: message for stderr and the process exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

impl Failure {
    pub fn new(code: u8, msg: impl Into<String>) -> Self {
        Failure {
            code,
            msg: msg.into(),
        }
    }
}

macro_rules! operational {
    ($($t:ty),+) => {
        $( impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::new(1, e.to_string())
            }
        } )+
    };
}

operational!(
    std::io::Error,
    serde_json::Error,
    flowchroma_core::data::DataError,
    flowchroma_core::model::ModelError,
    flowchroma_core::training::TrainError,
    flowchroma_core::eval::EvalError,
    flowchroma_core::colorspace::ColorError,
    flowchroma_core::tensor::TensorError
);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Colorize(a) => commands::colorize(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::GradCheck(a) => commands::grad_check(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
