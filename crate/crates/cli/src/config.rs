//! Flat run configuration.
//!
//! A config file is TOML with top-level keys only. Every key has a flag of the
//! same name with `_` replaced by `-`; a flag given on the command line wins
//! over the file. Unknown keys are rejected. See `configs/` for one example per
//! subcommand.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use twrnnt::model::Precision;
use twrnnt::ssl::corrupt::SubstitutionRule;
use twrnnt::ssl::report::Mode;
use twrnnt::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    // randomness
    pub seed: Option<u64>,

    // paths
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub lattice: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub pretrain: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,

    // synthetic data
    pub vocab_size: Option<usize>,
    pub input_dim: Option<usize>,
    pub min_tokens: Option<usize>,
    pub max_tokens: Option<usize>,
    pub min_frames_per_token: Option<usize>,
    pub max_frames_per_token: Option<usize>,
    pub noise: Option<f64>,
    pub n_train: Option<usize>,
    pub n_validation: Option<usize>,
    pub n_test: Option<usize>,
    pub n_pretrain: Option<usize>,

    // model and optimizer
    pub hidden: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub precision: Option<Precision>,
    pub max_symbols_per_frame: Option<usize>,

    // weighting
    pub weighting: Option<WeightingMode>,
    pub alpha: Option<f64>,
    pub final_blank_weight: Option<f64>,

    // corruption
    pub error_rate: Option<f64>,
    pub substitution: Option<SubstitutionRule>,

    // experiments
    pub levels: Option<Vec<f64>>,
    pub modes: Option<Vec<Mode>>,
    pub alpha_grid: Option<Vec<f64>>,
    pub replicates: Option<usize>,
    pub teacher_epochs: Option<usize>,
    pub rounds: Option<usize>,
    pub labeled_ratio: Option<f64>,
    pub pseudo_ratio: Option<f64>,

    // loss-check
    pub tokens: Option<Vec<usize>>,
    pub lambda: Option<Vec<f64>>,
}

/// Loss weighting for the `train` subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum WeightingMode {
    Standard,
    UtteranceWeights,
    TokenWeights,
    /// Use each utterance's stored `lambda`.
    Precomputed,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
    }
}

/// `Some(value)` or a config error naming the key and its flag.
pub fn required<T>(value: Option<T>, key: &str) -> Result<T> {
    value.ok_or_else(|| {
        Error::InvalidArgument(format!("missing setting `{key}` (config key `{key}` or flag --{})", key.replace('_', "-")))
    })
}

macro_rules! overlay {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $( if $args.$field.is_some() { $cfg.$field = $args.$field.clone(); } )*
    };
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl CommonArgs {
    pub fn base(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        overlay!(cfg, self; seed);
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Number of real tokens (blank excluded).
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    pub input_dim: Option<usize>,
    #[arg(long)]
    pub min_tokens: Option<usize>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long)]
    pub min_frames_per_token: Option<usize>,
    #[arg(long)]
    pub max_frames_per_token: Option<usize>,
    /// Standard deviation of the feature noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_validation: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub n_pretrain: Option<usize>,
}

impl SynthArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        overlay!(cfg, self; vocab_size, input_dim, min_tokens, max_tokens, min_frames_per_token,
            max_frames_per_token, noise, n_train, n_validation, n_test, n_pretrain);
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Hidden width of encoder, predictor and joiner.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Utterances per batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam step size.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Activation precision during training: f64 or f32.
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    /// Greedy decoding cap on tokens emitted per frame.
    #[arg(long)]
    pub max_symbols_per_frame: Option<usize>,
}

impl ModelArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        overlay!(cfg, self; hidden, epochs, batch_size, learning_rate, precision, max_symbols_per_frame);
    }
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s {
        "f64" => Ok(Precision::F64),
        "f32" => Ok(Precision::F32),
        _ => Err(format!("expected f64 or f32, got {s}")),
    }
}

pub fn parse_substitution(s: &str) -> std::result::Result<SubstitutionRule, String> {
    match s {
        "nearest_prototype" => Ok(SubstitutionRule::NearestPrototype),
        "uniform" => Ok(SubstitutionRule::Uniform),
        _ => Err(format!("expected nearest_prototype or uniform, got {s}")),
    }
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct WeightArgs {
    #[arg(long, value_enum)]
    pub weighting: Option<WeightingMode>,
    /// Confidence exponent.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the terminal blank term.
    #[arg(long)]
    pub final_blank_weight: Option<f64>,
}

impl WeightArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        overlay!(cfg, self; weighting, alpha, final_blank_weight);
    }
}

#[derive(Debug, Clone, Args)]
pub struct CorruptArgs {
    /// Probability that a token is corrupted.
    #[arg(long)]
    pub error_rate: Option<f64>,
    /// Substitute choice: nearest_prototype or uniform.
    #[arg(long, value_parser = parse_substitution)]
    pub substitution: Option<SubstitutionRule>,
}

impl CorruptArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        overlay!(cfg, self; error_rate, substitution);
    }
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// Weighting modes to compare, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    pub modes: Option<Vec<Mode>>,
    /// Alpha values tried for the weighted modes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub alpha_grid: Option<Vec<f64>>,
    /// Independent seed replicates.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Directory holding train/validation/test/pretrain.jsonl.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Report JSON to write.
    #[arg(long = "out")]
    pub output: Option<PathBuf>,
}

impl ExperimentArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        overlay!(cfg, self; modes, alpha_grid, replicates, data_dir, validation, test, output);
    }
}

pub(crate) use overlay;
