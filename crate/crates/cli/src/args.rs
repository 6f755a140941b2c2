use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use clickseg_core::{CfrConfig, ClickSequence};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Parser, Serialize, Deserialize)]
#[command(name = "clickseg", version, about = "Click-based interactive segmentation toolkit")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Global {
    /// Base seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for training batches and evaluation.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
    /// Log filter, e.g. `info` or `clickseg_core=debug`. Overrides CLICKSEG_LOG.
    #[arg(long, global = true)]
    pub log_level: Option<String>,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Write a synthetic shapes dataset.
    Synth(SynthArgs),
    /// Copy-paste and standard augmentation over a dataset.
    Augment(AugmentArgs),
    /// Train the toy segmenter with the iterative click loss.
    TrainToy(TrainArgs),
    /// Number-of-clicks benchmark.
    Eval(EvalArgs),
    /// One-shot segmentation of an image from a click list.
    Segment(SegmentArgs),
    /// Run the session HTTP service.
    Serve(ServeArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AugmentArgs {
    /// Dataset directory or `synth:COUNT:SIZE[:SEED]`.
    #[arg(long)]
    pub data: DataSource,
    /// Augmented samples to write; defaults to the dataset size.
    #[arg(long)]
    pub count: Option<usize>,
    /// Probability of applying a copy-paste mode at all.
    #[arg(long, default_value_t = 0.5)]
    pub apply_prob: f64,
    /// Relative weights of simple, union, exclusion and mixing.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [0.25, 0.25, 0.25, 0.25])]
    pub mode_probs: Vec<f64>,
    /// Longer side of the output images.
    #[arg(long, default_value_t = 448)]
    pub output_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset directory or `synth:COUNT:SIZE[:SEED]`.
    #[arg(long)]
    pub data: DataSource,
    /// Holdout set for per-epoch NoC@90 and IoU@1/3.
    #[arg(long)]
    pub holdout: Option<DataSource>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Corrective clicks per rollout.
    #[arg(long, default_value_t = 3)]
    pub t: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0])]
    pub betas: Vec<f64>,
    /// Weight of the loss before any corrective click; omitted by default.
    #[arg(long)]
    pub initial_beta: Option<f64>,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 5)]
    pub radius: usize,
    /// Evaluate the holdout every N epochs (0 = never).
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    /// Augment every training sample with copy-paste.
    #[arg(long)]
    pub suem: bool,
    #[arg(long, default_value_t = 0.5)]
    pub suem_apply_prob: f64,
    /// Initial parameter file; zero weights otherwise.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Dataset directory or `synth:COUNT:SIZE[:SEED]`.
    #[arg(long)]
    pub data: DataSource,
    /// `toy`, `toy:<params file>`, `external:<command>`, `oracle` or `empty`.
    #[arg(long, default_value = "toy")]
    pub segmenter: SegmenterSpec,
    /// Comma-separated inference modes, e.g. `fixed:0,fixed:1,adaptive:4`.
    #[arg(long, value_delimiter = ',', default_values_t = [CfrConfig::STANDARD])]
    pub cfr: Vec<CfrConfig>,
    #[arg(long, default_value_t = 20)]
    pub max_clicks: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.9, 0.95])]
    pub thresholds: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub radius: usize,
    /// Also write report.md and report.csv.
    #[arg(long)]
    pub report: bool,
    /// Published model whose reference NoC values are shown alongside.
    #[arg(long)]
    pub reference_model: Option<String>,
    /// Row label; defaults to the segmenter selector.
    #[arg(long)]
    pub model_name: Option<String>,
    /// Column label; defaults to the data source.
    #[arg(long)]
    pub dataset_name: Option<String>,
    /// Per-call timeout for external segmenters.
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SegmentArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// `u,v,l;u,v,l;...` with l = 1 positive, 0 negative.
    #[arg(long, value_parser = parse_clicks)]
    pub clicks: ClickSequence,
    #[arg(long, default_value = "toy")]
    pub segmenter: SegmenterSpec,
    #[arg(long, default_value_t = CfrConfig::STANDARD)]
    pub cfr: CfrConfig,
    #[arg(long, default_value_t = 5)]
    pub radius: usize,
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
    /// Also write the probability map (CSPM).
    #[arg(long)]
    pub prob_map: Option<PathBuf>,
    /// Output mask PNG.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    #[arg(long, default_value_t = clickseg_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Toy parameter file served to every session.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Segmenter selector; overrides --model.
    #[arg(long)]
    pub segmenter: Option<SegmenterSpec>,
    /// Default inference mode for new sessions.
    #[arg(long, default_value_t = CfrConfig::STANDARD)]
    pub cfr: CfrConfig,
    /// UI build served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = clickseg_service::DEFAULT_MAX_DIMENSION)]
    pub max_dimension: usize,
    #[arg(long, default_value_t = 1800)]
    pub ttl_secs: u64,
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Write to this location instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_clicks(s: &str) -> Result<ClickSequence, String> {
    ClickSequence::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SegmenterSpec {
    /// Toy model, with the built-in click prior when no file is given.
    Toy(Option<PathBuf>),
    External(String),
    Oracle,
    Empty,
}

impl FromStr for SegmenterSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None => match s {
                "toy" => Ok(Self::Toy(None)),
                "oracle" => Ok(Self::Oracle),
                "empty" => Ok(Self::Empty),
                _ => Err(format!("unknown segmenter {s:?}")),
            },
            Some(("toy", path)) if !path.is_empty() => Ok(Self::Toy(Some(path.into()))),
            Some(("external", cmd)) if !cmd.trim().is_empty() => Ok(Self::External(cmd.to_string())),
            _ => Err(format!("expected toy[:FILE], external:CMD, oracle or empty, got {s:?}")),
        }
    }
}

impl fmt::Display for SegmenterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Toy(None) => write!(f, "toy"),
            Self::Toy(Some(p)) => write!(f, "toy:{}", p.display()),
            Self::External(cmd) => write!(f, "external:{cmd}"),
            Self::Oracle => write!(f, "oracle"),
            Self::Empty => write!(f, "empty"),
        }
    }
}

impl TryFrom<String> for SegmenterSpec {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<SegmenterSpec> for String {
    fn from(s: SegmenterSpec) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DataSource {
    Dir(PathBuf),
    Synth { count: usize, size: usize, seed: u64 },
}

impl FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let Some(rest) = s.strip_prefix("synth:") else {
            return Ok(Self::Dir(s.into()));
        };
        let parts: Vec<&str> = rest.split(':').collect();
        let bad = || format!("expected synth:COUNT:SIZE[:SEED], got {s:?}");
        let num = |t: &str| t.parse::<u64>().map_err(|_| bad());
        match parts.as_slice() {
            [c, z] => Ok(Self::Synth {
                count: num(c)? as usize,
                size: num(z)? as usize,
                seed: 0,
            }),
            [c, z, seed] => Ok(Self::Synth {
                count: num(c)? as usize,
                size: num(z)? as usize,
                seed: num(seed)?,
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Dir(p) => write!(f, "{}", p.display()),
            Self::Synth { count, size, seed } => write!(f, "synth:{count}:{size}:{seed}"),
        }
    }
}

impl TryFrom<String> for DataSource {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<DataSource> for String {
    fn from(d: DataSource) -> String {
        d.to_string()
    }
}
