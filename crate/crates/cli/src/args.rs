use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "aerframe", version, about = "Collapse AER event streams into frames and probe them")]
pub struct Cli {
    /// Replay flags stored in a file (one or more per line, `#` starts a comment).
    #[arg(long, value_name = "FILE", global = true)]
    pub args_file: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print statistics of a `.bin` event file.
    Inspect(InspectArgs),
    /// Collapse event files into BMP/PGM frames.
    Collapse(CollapseArgs),
    /// Write a stratified train/validation manifest for a corpus.
    Split(SplitArgs),
    /// Train the probe classifier on collapsed frames.
    Train(TrainArgs),
    /// Report probe accuracy on a manifest split.
    Eval(EvalArgs),
    /// Generate a synthetic labelled event corpus.
    Synth(SynthArgs),
}

/// `WIDTHxHEIGHT`, both positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims(pub u32, pub u32);

impl FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WIDTHxHEIGHT, got '{s}'"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| format!("'{v}' is not a positive integer"))
        };
        Ok(Dims(parse(w)?, parse(h)?))
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.0, self.1)
    }
}

/// `START:END` in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bound(pub u64, pub u64);

impl FromStr for Bound {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("expected START:END, got '{s}'"))?;
        let parse = |v: &str| v.trim().parse::<u64>().map_err(|e| format!("'{v}': {e}"));
        Ok(Bound(parse(a)?, parse(b)?))
    }
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub file: PathBuf,
    /// Sensor size; inferred from the events when omitted.
    #[arg(long)]
    pub dims: Option<Dims>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolarityArg {
    On,
    Off,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Count,
    TimeSum,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Bmp,
    Pgm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OrderArg {
    QuantizeFirst,
    ResizeFirst,
}

#[derive(Debug, Args)]
pub struct CollapseArgs {
    /// A `.bin` file or a directory searched recursively for `.bin` files.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "on")]
    pub polarity: PolarityArg,
    /// Number of equal saccade windows the recording is divided into.
    #[arg(long, default_value_t = 3, conflicts_with = "boundaries")]
    pub windows: usize,
    /// Keep the first N saccades (default: all).
    #[arg(long, conflicts_with = "saccade_indices")]
    pub saccades: Option<usize>,
    /// Keep exactly these saccade indices, e.g. `0,2`.
    #[arg(long, value_delimiter = ',')]
    pub saccade_indices: Option<Vec<usize>>,
    /// Explicit half-open windows `START:END,...` in microseconds.
    #[arg(long, value_delimiter = ',')]
    pub boundaries: Option<Vec<Bound>>,
    /// Recording length used for equal windows (default: last timestamp).
    #[arg(long, conflicts_with = "boundaries")]
    pub duration: Option<u64>,
    #[arg(long, value_enum, default_value = "count")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "bmp")]
    pub format: FormatArg,
    #[arg(long)]
    pub resize: Option<Dims>,
    #[arg(long, value_enum, default_value = "nearest")]
    pub resize_method: MethodArg,
    #[arg(long, value_enum, default_value = "quantize-first")]
    pub resize_order: OrderArg,
    /// Sensor size; inferred per file from the events when omitted.
    #[arg(long)]
    pub dims: Option<Dims>,
    /// Continue past unreadable inputs.
    #[arg(long)]
    pub keep_going: bool,
    /// Worker threads (default: available cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = aerframe::dataset::DEFAULT_VAL_FRACTION)]
    pub val_fraction: f64,
    /// File extensions to include.
    #[arg(long = "ext", value_delimiter = ',', default_value = "bin")]
    pub extensions: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_values_t = aerframe::probe::DEFAULT_HIDDEN)]
    pub hidden: Vec<usize>,
    #[arg(long)]
    pub no_batchnorm: bool,
    #[arg(long, default_value_t = aerframe::probe::DEFAULT_DROPOUT)]
    pub dropout_rate: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of collapsed frames mirroring the manifest paths.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub history: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_dropout: bool,
    #[arg(long)]
    pub no_shuffle: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub adam_epsilon: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long, required_unless_present = "fresh_seed")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate an untrained He-initialized model built from this seed.
    #[arg(long, conflicts_with = "checkpoint")]
    pub fresh_seed: Option<u64>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value = "val")]
    pub split: SplitChoice,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TimingArg {
    Uniform,
    Raster,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 32)]
    pub width: u32,
    #[arg(long, default_value_t = 32)]
    pub height: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-pixel noise standard deviation relative to the peak count.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 20)]
    pub peak: u32,
    #[arg(long, default_value_t = 300_000)]
    pub duration: u64,
    #[arg(long, value_enum, default_value = "uniform")]
    pub timing: TimingArg,
}

/// Splices the contents of `--args-file FILE` into the argument list at the
/// flag's position.
pub fn expand_args_file(args: Vec<String>) -> Result<Vec<String>, String> {
    let mut out = Vec::with_capacity(args.len());
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let path = if arg == "--args-file" {
            Some(iter.next().ok_or("--args-file needs a path")?)
        } else {
            arg.strip_prefix("--args-file=").map(str::to_owned)
        };
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p).map_err(|e| format!("{p}: {e}"))?;
                out.extend(
                    text.lines()
                        .map(|l| l.split('#').next().unwrap_or(""))
                        .flat_map(str::split_whitespace)
                        .map(str::to_owned),
                );
            }
            None => out.push(arg),
        }
    }
    Ok(out)
}
