//! `twrnnt` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure. On failure one JSON line is written to stderr:
//! `{"error":{"kind":"data","exit_code":3,"message":"..."}}`.

mod commands;
mod config;
mod lattice_file;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use twrnnt::error::ErrorKind;
use twrnnt::{Error, Result};

use config::{overlay, parse_substitution, CommonArgs, CorruptArgs, ExperimentArgs, ModelArgs, RunConfig, SynthArgs, WeightArgs};

#[derive(Parser)]
#[command(name = "twrnnt", version, about = "Token-weighted transducer training and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/validation/test/pretrain splits.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        synth: SynthArgs,
        /// Directory for the four split files.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        io: InOut,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        weights: WeightArgs,
        /// Dataset for reporting WER after training.
        #[arg(long)]
        validation: Option<PathBuf>,
    },
    /// Greedy-decode a dataset; hypotheses replace the tokens in the output.
    Decode {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        io: InOut,
        /// Checkpoint to decode with.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        max_symbols_per_frame: Option<usize>,
    },
    /// Attach conditional token confidences (and optionally weights) to a dataset.
    ScoreConfidence {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        io: InOut,
        /// Checkpoint of the scoring model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also write `lambda` weights normalized over the whole file.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        final_blank_weight: Option<f64>,
    },
    /// Corrupt the transcripts of a dataset.
    Corrupt {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        io: InOut,
        #[command(flatten)]
        corruption: CorruptArgs,
    },
    /// Compare loss weightings when training on corrupted transcripts.
    RunCorruption {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Corruption levels, comma separated.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        /// Epochs for the confidence scorer trained on the pretrain split.
        #[arg(long)]
        teacher_epochs: Option<usize>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        pretrain: Option<PathBuf>,
        #[arg(long, value_parser = parse_substitution)]
        substitution: Option<twrnnt::ssl::corrupt::SubstitutionRule>,
    },
    /// Iterative pseudo-labeling with each loss weighting.
    RunPseudolabel {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        rounds: Option<usize>,
        /// Labeled share of each batch, relative to --pseudo-ratio.
        #[arg(long)]
        labeled_ratio: Option<f64>,
        #[arg(long)]
        pseudo_ratio: Option<f64>,
        #[arg(long)]
        labeled: Option<PathBuf>,
        #[arg(long)]
        unlabeled: Option<PathBuf>,
    },
    /// Losses and conditionals of a lattice file, checked against enumeration.
    LossCheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Lattice JSON file.
        #[arg(long)]
        lattice: Option<PathBuf>,
        /// Label sequence, comma separated; overrides the file's `tokens`.
        #[arg(long, value_delimiter = ',')]
        tokens: Option<Vec<usize>>,
        /// Token weights, comma separated; default derives them from the conditionals.
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
        /// Exponent used when weights are derived.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        final_blank_weight: Option<f64>,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Print the table of a saved experiment report.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Report JSON file.
        #[arg(long = "in")]
        report: Option<PathBuf>,
        /// Print the summary rows as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Args)]
struct InOut {
    /// Input dataset (JSON lines).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Output file.
    #[arg(long = "out")]
    output: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common, synth, out_dir } => {
            let mut cfg = common.base()?;
            synth.apply(&mut cfg);
            let o = Overrides { out_dir, ..Overrides::default() };
            overlay!(cfg, o; out_dir);
            commands::gen_data(&cfg)
        }
        Command::Train { common, io, model, weights, validation } => {
            let mut cfg = with_io(common.base()?, &io);
            model.apply(&mut cfg);
            weights.apply(&mut cfg);
            let o = Overrides { validation, ..Overrides::default() };
            overlay!(cfg, o; validation);
            commands::train_cmd(&cfg)
        }
        Command::Decode { common, io, model, max_symbols_per_frame } => {
            let mut cfg = with_io(common.base()?, &io);
            let o = Overrides { model, max_symbols_per_frame, ..Overrides::default() };
            overlay!(cfg, o; model, max_symbols_per_frame);
            commands::decode(&cfg)
        }
        Command::ScoreConfidence { common, io, model, alpha, final_blank_weight } => {
            let mut cfg = with_io(common.base()?, &io);
            let o = Overrides { model, alpha, final_blank_weight, ..Overrides::default() };
            overlay!(cfg, o; model, alpha, final_blank_weight);
            commands::score_confidence(&cfg)
        }
        Command::Corrupt { common, io, corruption } => {
            let mut cfg = with_io(common.base()?, &io);
            corruption.apply(&mut cfg);
            commands::corrupt(&cfg)
        }
        Command::RunCorruption { common, experiment, model, levels, teacher_epochs, train, pretrain, substitution } => {
            let mut cfg = common.base()?;
            experiment.apply(&mut cfg);
            model.apply(&mut cfg);
            let o = Overrides { levels, teacher_epochs, train, pretrain, substitution, ..Overrides::default() };
            overlay!(cfg, o; levels, teacher_epochs, train, pretrain, substitution);
            commands::run_corruption(&cfg)
        }
        Command::RunPseudolabel { common, experiment, model, rounds, labeled_ratio, pseudo_ratio, labeled, unlabeled } => {
            let mut cfg = common.base()?;
            experiment.apply(&mut cfg);
            model.apply(&mut cfg);
            let o = Overrides { rounds, labeled_ratio, pseudo_ratio, labeled, unlabeled, ..Overrides::default() };
            overlay!(cfg, o; rounds, labeled_ratio, pseudo_ratio, labeled, unlabeled);
            commands::run_pseudolabel(&cfg)
        }
        Command::LossCheck { common, lattice, tokens, lambda, alpha, final_blank_weight, json } => {
            let mut cfg = common.base()?;
            let o = Overrides { lattice, tokens, lambda, alpha, final_blank_weight, ..Overrides::default() };
            overlay!(cfg, o; lattice, tokens, lambda, alpha, final_blank_weight);
            commands::loss_check(&cfg, json)
        }
        Command::Report { common, report, json } => {
            let mut cfg = common.base()?;
            let o = Overrides { report, ..Overrides::default() };
            overlay!(cfg, o; report);
            commands::report(&cfg, json)
        }
    }
}

/// Flag values of a single subcommand, laid out like [`RunConfig`].
type Overrides = RunConfig;

fn with_io(mut cfg: RunConfig, io: &InOut) -> RunConfig {
    overlay!(cfg, io; input, output);
    cfg
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn report_error(e: &Error) -> ExitCode {
    let code = exit_code(e.kind());
    let kind = match e.kind() {
        ErrorKind::Config => "config",
        ErrorKind::Data => "data",
        ErrorKind::Numerical => "numerical",
    };
    let line = serde_json::json!({ "error": { "kind": kind, "exit_code": code, "message": e.to_string() } });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}
