use std::path::{Path, PathBuf};

use serde::Serialize;
use twrnnt::checkpoint::Checkpoint;
use twrnnt::data::{generate_synthetic, Dataset, Provenance, SyntheticConfig, SCHEMA_VERSION};
use twrnnt::lattice::rnnt_loss;
use twrnnt::model::{AdamHyper, ModelDims, DEFAULT_MAX_SYMBOLS_PER_FRAME};
use twrnnt::oracle::{exact_conditionals, exact_sequence_logp, path_count, PATH_LIMIT};
use twrnnt::rng::SeedTree;
use twrnnt::ssl::corrupt::{corrupt_dataset, CorruptionConfig};
use twrnnt::ssl::experiment::{run_corruption_experiment, run_pseudo_labeling, CorruptionExperimentConfig, GenerationConfig, StudentConfig};
use twrnnt::ssl::report::ExperimentReport;
use twrnnt::ssl::wer::{edit_counts, EditCounts};
use twrnnt::token_conditional::conditional_profile;
use twrnnt::train::{decode_dataset, evaluate, score_confidences, train, Pool, TrainConfig, Weighting};
use twrnnt::weighted_loss::{compute_weights, weighted_rnnt_loss, Normalization, TokenWeights, WeightConfig};
use twrnnt::{Error, LabelSequence, Result};

use crate::config::{required, RunConfig, WeightingMode};
use crate::lattice_file::LatticeFile;

const SPLITS: [&str; 4] = ["train", "validation", "test", "pretrain"];

fn must_exist(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!("input file {} does not exist", path.display())));
    }
    Ok(())
}

fn must_be_writable(path: &Path) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        return Err(Error::InvalidArgument(format!("output directory {} does not exist", parent.display())));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn seed(cfg: &RunConfig) -> u64 {
    cfg.seed.unwrap_or(1)
}

fn synthetic_config(cfg: &RunConfig) -> SyntheticConfig {
    let d = SyntheticConfig::default();
    SyntheticConfig {
        vocab_size: cfg.vocab_size.unwrap_or(d.vocab_size),
        input_dim: cfg.input_dim.unwrap_or(d.input_dim),
        min_tokens: cfg.min_tokens.unwrap_or(d.min_tokens),
        max_tokens: cfg.max_tokens.unwrap_or(d.max_tokens),
        min_frames_per_token: cfg.min_frames_per_token.unwrap_or(d.min_frames_per_token),
        max_frames_per_token: cfg.max_frames_per_token.unwrap_or(d.max_frames_per_token),
        noise: cfg.noise.unwrap_or(d.noise),
        n_train: cfg.n_train.unwrap_or(d.n_train),
        n_validation: cfg.n_validation.unwrap_or(d.n_validation),
        n_test: cfg.n_test.unwrap_or(d.n_test),
        n_pretrain: cfg.n_pretrain.unwrap_or(d.n_pretrain),
        seed: seed(cfg),
    }
}

fn student_config(cfg: &RunConfig) -> Result<StudentConfig> {
    let d = StudentConfig::default();
    let adam = AdamHyper { lr: cfg.learning_rate.unwrap_or(d.training.adam.lr), ..d.training.adam };
    if !(adam.lr > 0.0 && adam.lr.is_finite()) {
        return Err(Error::InvalidArgument("learning_rate must be finite and > 0".into()));
    }
    Ok(StudentConfig {
        hidden: cfg.hidden.unwrap_or(d.hidden),
        training: TrainConfig {
            epochs: cfg.epochs.unwrap_or(d.training.epochs),
            batch_size: cfg.batch_size.unwrap_or(d.training.batch_size),
            adam,
            precision: cfg.precision.unwrap_or(d.training.precision),
            weighting: Weighting::Standard,
            final_blank_weight: cfg.final_blank_weight.unwrap_or(1.0),
        },
        max_symbols_per_frame: cfg.max_symbols_per_frame.unwrap_or(d.max_symbols_per_frame),
    })
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let out_dir = required(cfg.out_dir.clone(), "out_dir")?;
    let synth = synthetic_config(cfg);
    synth.validate()?;
    must_be_writable(&out_dir)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::InvalidArgument(format!("{}: {e}", out_dir.display())))?;
    let splits = generate_synthetic(&synth)?;
    for (name, data) in splits.named() {
        let path = out_dir.join(format!("{name}.jsonl"));
        data.write_path(&path)?;
        println!("{name}: {} utterances, {} tokens -> {}", data.utterances.len(), data.token_count(), path.display());
    }
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let input = required(cfg.input.clone(), "input")?;
    let output = required(cfg.output.clone(), "output")?;
    must_exist(&input)?;
    if let Some(v) = &cfg.validation {
        must_exist(v)?;
    }
    must_be_writable(&output)?;
    let student = student_config(cfg)?;
    let alpha = cfg.alpha.unwrap_or(1.0);
    let weighting = match cfg.weighting.unwrap_or(WeightingMode::Standard) {
        WeightingMode::Standard => Weighting::Standard,
        WeightingMode::UtteranceWeights => Weighting::UtteranceWeights { alpha },
        WeightingMode::TokenWeights => Weighting::TokenWeights { alpha },
        WeightingMode::Precomputed => Weighting::Precomputed,
    };
    let data = Dataset::read_path(&input)?;
    let validation = cfg.validation.as_deref().map(Dataset::read_path).transpose()?;
    let dims = ModelDims { input_dim: data.header.input_dim, hidden: student.hidden, vocab_size: data.header.vocab_size };
    let train_cfg = TrainConfig { weighting, ..student.training };
    let outcome = train(dims, &[Pool { utterances: &data.utterances, share: 1.0 }], &train_cfg, SeedTree::new(seed(cfg)))?;
    for (i, loss) in outcome.epoch_losses.iter().enumerate() {
        println!("epoch {:>3}  loss/token {loss:.6}", i + 1);
    }
    if let Some(v) = &validation {
        let (wer, counts) = evaluate(&outcome.model, &v.utterances, student.max_symbols_per_frame)?;
        println!("validation {}", wer_line(wer, &counts));
    }
    let provenance = Provenance::new("train", seed(cfg), &(&train_cfg, dims));
    Checkpoint::new(provenance, outcome.model, Some(outcome.optimizer), outcome.epoch_losses).write_path(&output)
}

fn wer_line(wer: f64, c: &EditCounts) -> String {
    format!(
        "wer {:.4} (sub {} ins {} del {} / {} reference tokens)",
        wer, c.substitutions, c.insertions, c.deletions, c.reference_len
    )
}

pub fn decode(cfg: &RunConfig) -> Result<()> {
    let model_path = required(cfg.model.clone(), "model")?;
    let input = required(cfg.input.clone(), "input")?;
    let output = required(cfg.output.clone(), "output")?;
    must_exist(&model_path)?;
    must_exist(&input)?;
    must_be_writable(&output)?;
    let model = Checkpoint::read_path(&model_path)?.model;
    let mut data = Dataset::read_path(&input)?;
    let max_symbols = cfg.max_symbols_per_frame.unwrap_or(DEFAULT_MAX_SYMBOLS_PER_FRAME);
    let hyps = decode_dataset(&model, &data.utterances, max_symbols)?;
    let mut counts = EditCounts::default();
    for (u, h) in data.utterances.iter_mut().zip(hyps) {
        counts += edit_counts(&h, &u.tokens);
        u.tokens = h;
        u.confidences = None;
        u.final_blank_logp = None;
        u.lambda = None;
    }
    if counts.reference_len > 0 {
        println!("{}", wer_line(counts.wer(), &counts));
    }
    data.header.provenance = Provenance::new("decode", seed(cfg), &(model_path.display().to_string(), max_symbols));
    data.write_path(&output)
}

pub fn score_confidence(cfg: &RunConfig) -> Result<()> {
    let model_path = required(cfg.model.clone(), "model")?;
    let input = required(cfg.input.clone(), "input")?;
    let output = required(cfg.output.clone(), "output")?;
    must_exist(&model_path)?;
    must_exist(&input)?;
    must_be_writable(&output)?;
    let model = Checkpoint::read_path(&model_path)?.model;
    let mut data = Dataset::read_path(&input)?;
    score_confidences(&model, &mut data.utterances)?;
    if let Some(alpha) = cfg.alpha {
        let conf: Vec<&[f64]> = data.utterances.iter().map(|u| u.confidences.as_deref().unwrap_or(&[])).collect();
        let weight_cfg = WeightConfig {
            alpha,
            final_blank_weight: cfg.final_blank_weight.unwrap_or(1.0),
            normalization: Normalization::PerBatch,
        };
        let weights = compute_weights(&conf, &weight_cfg)?;
        for (u, w) in data.utterances.iter_mut().zip(weights) {
            u.lambda = Some(w.lambdas);
        }
    }
    data.header.provenance = Provenance::new("score-confidence", seed(cfg), &(model_path.display().to_string(), cfg.alpha));
    data.write_path(&output)?;
    println!("scored {} utterances -> {}", data.utterances.len(), output.display());
    Ok(())
}

pub fn corrupt(cfg: &RunConfig) -> Result<()> {
    let input = required(cfg.input.clone(), "input")?;
    let output = required(cfg.output.clone(), "output")?;
    let rate = required(cfg.error_rate, "error_rate")?;
    must_exist(&input)?;
    must_be_writable(&output)?;
    let corruption =
        CorruptionConfig { substitution: cfg.substitution.unwrap_or_default(), ..CorruptionConfig::new(rate, seed(cfg)) };
    corruption.validate()?;
    let data = Dataset::read_path(&input)?;
    let corrupted = corrupt_dataset(&data, &corruption)?;
    let mut counts = EditCounts::default();
    for (c, r) in corrupted.utterances.iter().zip(&data.utterances) {
        counts += edit_counts(&c.tokens, &r.tokens);
    }
    if counts.reference_len > 0 {
        println!("reference {}", wer_line(counts.wer(), &counts));
    }
    corrupted.write_path(&output)
}

fn split_path(cfg: &RunConfig, explicit: &Option<PathBuf>, split: &str) -> Result<PathBuf> {
    match (explicit, &cfg.data_dir) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(dir)) => Ok(dir.join(format!("{split}.jsonl"))),
        (None, None) => required(None, split),
    }
}

fn finish_report(report: &ExperimentReport, output: &Path) -> Result<()> {
    write_text(output, &(report.to_json()? + "\n"))?;
    print!("{}", report.table());
    Ok(())
}

pub fn run_corruption(cfg: &RunConfig) -> Result<()> {
    let paths: Vec<PathBuf> = [&cfg.train, &cfg.validation, &cfg.test, &cfg.pretrain]
        .iter()
        .zip(SPLITS)
        .map(|(p, s)| split_path(cfg, p, s))
        .collect::<Result<_>>()?;
    let output = required(cfg.output.clone(), "output")?;
    for p in &paths {
        must_exist(p)?;
    }
    must_be_writable(&output)?;
    let d = CorruptionExperimentConfig::default();
    let exp = CorruptionExperimentConfig {
        levels: cfg.levels.clone().unwrap_or(d.levels),
        modes: cfg.modes.clone().unwrap_or(d.modes),
        alpha_grid: cfg.alpha_grid.clone().unwrap_or(d.alpha_grid),
        seed: seed(cfg),
        replicates: cfg.replicates.unwrap_or(d.replicates),
        student: student_config(cfg)?,
        teacher_epochs: cfg.teacher_epochs.unwrap_or(d.teacher_epochs),
        substitution: cfg.substitution.unwrap_or(d.substitution),
    };
    exp.validate()?;
    let [train_set, validation, test, pretrain] = read_all(&paths)?;
    let report = run_corruption_experiment(&train_set, &pretrain, &validation, &test, &exp)?;
    finish_report(&report, &output)
}

fn read_all(paths: &[PathBuf]) -> Result<[Dataset; 4]> {
    let v: Vec<Dataset> = paths.iter().map(|p| Dataset::read_path(p)).collect::<Result<_>>()?;
    v.try_into().map_err(|_| Error::InvalidArgument("expected four datasets".into()))
}

/// With `data_dir`, the labeled set defaults to its pretrain split and the
/// unlabeled set to its train split.
pub fn run_pseudolabel(cfg: &RunConfig) -> Result<()> {
    let paths: Vec<PathBuf> = vec![
        split_path(cfg, &cfg.labeled, "pretrain").map_err(|_| missing("labeled"))?,
        split_path(cfg, &cfg.unlabeled, "train").map_err(|_| missing("unlabeled"))?,
        split_path(cfg, &cfg.validation, "validation")?,
        split_path(cfg, &cfg.test, "test")?,
    ];
    let output = required(cfg.output.clone(), "output")?;
    for p in &paths {
        must_exist(p)?;
    }
    must_be_writable(&output)?;
    let d = GenerationConfig::default();
    let gen = GenerationConfig {
        rounds: cfg.rounds.unwrap_or(d.rounds),
        alpha_grid: cfg.alpha_grid.clone().unwrap_or(d.alpha_grid),
        labeled_to_pseudo_ratio: (
            cfg.labeled_ratio.unwrap_or(d.labeled_to_pseudo_ratio.0),
            cfg.pseudo_ratio.unwrap_or(d.labeled_to_pseudo_ratio.1),
        ),
        modes: cfg.modes.clone().unwrap_or(d.modes),
        seed: seed(cfg),
        replicates: cfg.replicates.unwrap_or(d.replicates),
        student: student_config(cfg)?,
    };
    gen.validate()?;
    let [labeled, unlabeled, validation, test] = read_all(&paths)?;
    let report = run_pseudo_labeling(&labeled, &unlabeled, &validation, &test, &gen)?;
    finish_report(&report, &output)
}

fn missing(key: &str) -> Error {
    required::<()>(None, key).unwrap_err()
}

#[derive(Debug, Serialize)]
pub struct LossCheck {
    pub schema_version: u32,
    pub frames: usize,
    pub labels: usize,
    pub vocab: usize,
    pub loss: f64,
    pub conditionals: Vec<f64>,
    pub final_blank_logp: f64,
    pub lambda: Vec<f64>,
    pub final_blank_weight: f64,
    pub weighted_loss: f64,
    /// Present when the lattice has at most the enumeration limit of paths.
    pub oracle: Option<OracleCheck>,
}

#[derive(Debug, Serialize)]
pub struct OracleCheck {
    pub paths: u128,
    pub loss: f64,
    pub conditionals: Vec<f64>,
    pub loss_abs_diff: f64,
    pub max_conditional_abs_diff: f64,
}

pub fn loss_check(cfg: &RunConfig, json: bool) -> Result<()> {
    let path = required(cfg.lattice.clone(), "lattice")?;
    must_exist(&path)?;
    let file = LatticeFile::read_path(&path)?;
    let lattice = file.lattice()?;
    let tokens = cfg.tokens.clone().or(file.tokens.clone()).ok_or_else(|| missing("tokens"))?;
    let y = LabelSequence::new(tokens, lattice.vocab())?;
    lattice.check_labels(&y)?;
    let loss = rnnt_loss(&lattice, &y)?;
    if !loss.is_finite() {
        return Err(Error::ZeroProbability);
    }
    let profile = conditional_profile(&lattice, &y)?;
    let final_blank_weight = cfg.final_blank_weight.unwrap_or(1.0);
    let weights = match cfg.lambda.clone().or(file.lambda.clone()) {
        Some(lambdas) => TokenWeights { lambdas, final_blank_weight, source_confidences: Vec::new(), config: None },
        None => {
            let wc = WeightConfig {
                alpha: cfg.alpha.unwrap_or(1.0),
                final_blank_weight,
                normalization: Normalization::PerUtterance,
            };
            compute_weights(&[&profile.conditionals], &wc)?.remove(0)
        }
    };
    let weighted_loss = weighted_rnnt_loss(&lattice, &y, &weights)?;
    let paths = path_count(lattice.frames(), y.len());
    let oracle = if paths <= PATH_LIMIT {
        let oracle_loss = -exact_sequence_logp(&lattice, &y)?;
        let conds = if y.is_empty() { Vec::new() } else { exact_conditionals(&lattice, &y)? };
        let max_diff = conds.iter().zip(&profile.conditionals).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Some(OracleCheck {
            paths,
            loss: oracle_loss,
            loss_abs_diff: (oracle_loss - loss).abs(),
            conditionals: conds,
            max_conditional_abs_diff: max_diff,
        })
    } else {
        None
    };
    let check = LossCheck {
        schema_version: SCHEMA_VERSION,
        frames: lattice.frames(),
        labels: y.len(),
        vocab: lattice.vocab().size(),
        loss,
        conditionals: profile.conditionals,
        final_blank_logp: profile.final_blank_logp,
        lambda: weights.lambdas,
        final_blank_weight,
        weighted_loss,
        oracle,
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&check).map_err(|e| Error::Data(e.to_string()))?);
    } else {
        print_loss_check(&check);
    }
    Ok(())
}

fn print_loss_check(c: &LossCheck) {
    let list = |v: &[f64]| v.iter().map(|x| format!("{x:.12}")).collect::<Vec<_>>().join(" ");
    println!("lattice            T={} U={} |V|={}", c.frames, c.labels, c.vocab);
    println!("loss               {:.12}", c.loss);
    println!("conditionals       {}", list(&c.conditionals));
    println!("final_blank_logp   {:.12}", c.final_blank_logp);
    println!("lambda             {}", list(&c.lambda));
    println!("weighted_loss      {:.12}", c.weighted_loss);
    match &c.oracle {
        Some(o) => {
            println!("oracle_loss        {:.12}  ({} paths)", o.loss, o.paths);
            println!("oracle_conditionals {}", list(&o.conditionals));
            println!("|loss - oracle|    {:.3e}", o.loss_abs_diff);
            println!("max |c - oracle|   {:.3e}", o.max_conditional_abs_diff);
        }
        None => println!("oracle             skipped (more than {PATH_LIMIT} paths)"),
    }
}

pub fn report(cfg: &RunConfig, json: bool) -> Result<()> {
    let path = required(cfg.report.clone(), "report")?;
    must_exist(&path)?;
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let report = ExperimentReport::from_json(&text)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report.summary).map_err(|e| Error::Data(e.to_string()))?);
    } else {
        print!("{}", report.table());
    }
    Ok(())
}
