//! The two experiment protocols: training on corrupted references and
//! iterative pseudo-labeling.
//!
//! Within one replicate, every student of a condition starts from the same
//! initialization and sees the same batch order, so modes differ only in how
//! the loss is weighted.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Provenance, Utterance};
use crate::error::{Error, Result};
use crate::model::{ModelDims, TransducerModel, DEFAULT_MAX_SYMBOLS_PER_FRAME};
use crate::rng::SeedTree;
use crate::ssl::corrupt::{corrupt_dataset, CorruptionConfig, SubstitutionRule};
use crate::ssl::report::{AlphaPoint, Condition, ExperimentKind, ExperimentReport, Mode, RunRecord};
use crate::ssl::wer::{edit_counts, EditCounts};
use crate::train::{decode_dataset, evaluate, score_confidences, train, Pool, TrainConfig, Weighting};

/// Model size and optimization settings shared by every student and teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub hidden: usize,
    /// The `weighting` field is ignored; each mode sets its own.
    pub training: TrainConfig,
    pub max_symbols_per_frame: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            training: TrainConfig { epochs: 20, ..TrainConfig::default() },
            max_symbols_per_frame: DEFAULT_MAX_SYMBOLS_PER_FRAME,
        }
    }
}

impl StudentConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.training.batch_size == 0 || self.max_symbols_per_frame == 0 {
            return Err(Error::InvalidArgument("hidden, batch_size and max_symbols_per_frame must be >= 1".into()));
        }
        Ok(())
    }

    fn dims(&self, data: &Dataset) -> ModelDims {
        ModelDims { input_dim: data.header.input_dim, hidden: self.hidden, vocab_size: data.header.vocab_size }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionExperimentConfig {
    pub levels: Vec<f64>,
    pub modes: Vec<Mode>,
    pub alpha_grid: Vec<f64>,
    pub seed: u64,
    pub replicates: usize,
    pub student: StudentConfig,
    /// Epochs for the confidence scorer trained on the pretraining split.
    pub teacher_epochs: usize,
    pub substitution: SubstitutionRule,
}

impl Default for CorruptionExperimentConfig {
    fn default() -> Self {
        Self {
            levels: vec![0.1, 0.2, 0.3, 0.4],
            modes: Mode::ALL.to_vec(),
            alpha_grid: vec![1.0, 2.0, 4.0, 6.0, 8.0],
            seed: 1,
            replicates: 3,
            student: StudentConfig::default(),
            teacher_epochs: 40,
            substitution: SubstitutionRule::NearestPrototype,
        }
    }
}

impl CorruptionExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.student.validate()?;
        validate_common(&self.modes, &self.alpha_grid, self.replicates)?;
        if self.levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::InvalidArgument("corruption levels must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Settings of the iterative pseudo-labeling experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub rounds: usize,
    pub alpha_grid: Vec<f64>,
    /// Expected share of labeled versus pseudo-labeled utterances in a batch.
    pub labeled_to_pseudo_ratio: (f64, f64),
    pub modes: Vec<Mode>,
    pub seed: u64,
    pub replicates: usize,
    pub student: StudentConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            alpha_grid: vec![1.0, 2.0, 4.0, 6.0, 8.0],
            labeled_to_pseudo_ratio: (1.0, 9.0),
            modes: Mode::ALL.to_vec(),
            seed: 1,
            replicates: 3,
            student: StudentConfig::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        self.student.validate()?;
        validate_common(&self.modes, &self.alpha_grid, self.replicates)?;
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("rounds must be >= 1".into()));
        }
        let (a, b) = self.labeled_to_pseudo_ratio;
        if !(a >= 0.0 && b >= 0.0 && a + b > 0.0 && (a + b).is_finite()) {
            return Err(Error::InvalidArgument("mixing ratio must be nonnegative and not both zero".into()));
        }
        Ok(())
    }
}

fn validate_common(modes: &[Mode], grid: &[f64], replicates: usize) -> Result<()> {
    if modes.is_empty() || replicates == 0 {
        return Err(Error::InvalidArgument("need at least one mode and one replicate".into()));
    }
    if modes.iter().any(|m| m.uses_alpha()) && grid.is_empty() {
        return Err(Error::InvalidArgument("alpha grid must be nonempty for weighted modes".into()));
    }
    if grid.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(Error::InvalidArgument("alpha values must be finite and >= 0".into()));
    }
    Ok(())
}

fn replicate_seed(root: u64, replicate: usize) -> SeedTree {
    SeedTree::new(root).child(&format!("replicate={replicate}"))
}

fn check_disjoint(a: &Dataset, b: &Dataset, what: &str) -> Result<()> {
    let ids: HashSet<&str> = a.utterances.iter().map(|u| u.id.as_str()).collect();
    if let Some(u) = b.utterances.iter().find(|u| ids.contains(u.id.as_str())) {
        return Err(Error::Data(format!("{what}: utterance {} appears in both splits", u.id)));
    }
    Ok(())
}

fn require_nonempty(d: &Dataset, what: &str) -> Result<()> {
    if d.utterances.is_empty() {
        return Err(Error::Data(format!("{what} split is empty")));
    }
    Ok(())
}

/// Outcome of fitting one mode, possibly over an alpha grid.
struct Fitted {
    record: RunRecord,
    model: Option<TransducerModel>,
}

/// Best alpha of a sweep so far, by validation WER.
struct Best {
    alpha: Option<f64>,
    validation_wer: f64,
    test_wer: f64,
    loss: Option<f64>,
    model: TransducerModel,
}

struct EvalSets<'a> {
    validation: &'a [Utterance],
    test: &'a [Utterance],
}

/// Trains one student per grid point (one for the standard mode) and keeps the
/// one with the lowest validation WER; ties go to the smaller alpha.
#[allow(clippy::too_many_arguments)]
fn fit_mode(
    dims: ModelDims,
    pools: &[Pool<'_>],
    mode: Mode,
    grid: &[f64],
    student: &StudentConfig,
    seed: SeedTree,
    eval: &EvalSets<'_>,
    condition: Condition,
    replicate: usize,
) -> Result<Fitted> {
    let mut alphas: Vec<Option<f64>> = if mode.uses_alpha() {
        let mut g = grid.to_vec();
        g.sort_by(f64::total_cmp);
        g.dedup();
        g.into_iter().map(Some).collect()
    } else {
        vec![None]
    };
    if alphas.is_empty() {
        alphas.push(Some(0.0));
    }
    let mut sweep = Vec::new();
    let mut best: Option<Best> = None;
    let mut failure = None;
    for alpha in alphas {
        let cfg = TrainConfig { weighting: mode.weighting(alpha.unwrap_or(0.0)), ..student.training.clone() };
        let outcome = match train(dims, pools, &cfg, seed) {
            Ok(o) => o,
            Err(Error::Diverged(msg)) => {
                failure = Some(format!("alpha {alpha:?}: {msg}"));
                continue;
            }
            Err(e) => return Err(e),
        };
        let (val, _) = evaluate(&outcome.model, eval.validation, student.max_symbols_per_frame)?;
        let (test, _) = evaluate(&outcome.model, eval.test, student.max_symbols_per_frame)?;
        let loss = outcome.epoch_losses.last().copied();
        if let Some(a) = alpha {
            sweep.push(AlphaPoint { alpha: a, validation_wer: val, test_wer: test, final_train_loss: loss });
        }
        if best.as_ref().is_none_or(|b| val < b.validation_wer) {
            best = Some(Best { alpha, validation_wer: val, test_wer: test, loss, model: outcome.model });
        }
    }
    let record = |chosen_alpha, validation_wer, test_wer, final_train_loss, failure| RunRecord {
        replicate,
        condition,
        mode,
        chosen_alpha,
        validation_wer,
        test_wer,
        final_train_loss,
        sweep: sweep.clone(),
        reference_wer: None,
        failure,
    };
    Ok(match best {
        Some(b) => Fitted {
            record: record(b.alpha, b.validation_wer, b.test_wer, b.loss, failure),
            model: Some(b.model),
        },
        None => Fitted { record: record(None, 1.0, 1.0, None, failure), model: None },
    })
}

/// Trains on references corrupted at each level and compares the loss
/// weightings. Confidences come from a teacher trained on `pretrain` only.
pub fn run_corruption_experiment(
    train_set: &Dataset,
    pretrain: &Dataset,
    validation: &Dataset,
    test: &Dataset,
    cfg: &CorruptionExperimentConfig,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    require_nonempty(pretrain, "pretrain")?;
    for (d, what) in [(train_set, "train"), (validation, "validation"), (test, "test")] {
        require_nonempty(d, what)?;
    }
    check_disjoint(train_set, pretrain, "train/pretrain")?;
    let dims = cfg.student.dims(train_set);
    let eval = EvalSets { validation: &validation.utterances, test: &test.utterances };
    let mut runs = Vec::new();
    for replicate in 0..cfg.replicates {
        let rep = replicate_seed(cfg.seed, replicate);
        let teacher_cfg = TrainConfig {
            epochs: cfg.teacher_epochs,
            weighting: Weighting::Standard,
            ..cfg.student.training.clone()
        };
        let teacher = train(dims, &[Pool { utterances: &pretrain.utterances, share: 1.0 }], &teacher_cfg, rep.child("teacher"))?
            .model;
        let student_seed = rep.child("student");
        let clean_pool = [Pool { utterances: &train_set.utterances, share: 1.0 }];
        let clean =
            fit_mode(dims, &clean_pool, Mode::Standard, &[], &cfg.student, student_seed, &eval, Condition::Clean, replicate)?;
        runs.push(clean.record);
        for &level in &cfg.levels {
            let corruption = CorruptionConfig {
                substitution: cfg.substitution,
                ..CorruptionConfig::new(level, rep.child(&format!("level={level}")).seed())
            };
            let mut corrupted = corrupt_dataset(train_set, &corruption)?;
            let mut counts = EditCounts::default();
            for (c, r) in corrupted.utterances.iter().zip(&train_set.utterances) {
                counts += edit_counts(&c.tokens, &r.tokens);
            }
            score_confidences(&teacher, &mut corrupted.utterances)?;
            let pool = [Pool { utterances: &corrupted.utterances, share: 1.0 }];
            let condition = Condition::Corrupted { level };
            for &mode in &cfg.modes {
                let mut fitted =
                    fit_mode(dims, &pool, mode, &cfg.alpha_grid, &cfg.student, student_seed, &eval, condition, replicate)?;
                fitted.record.reference_wer = Some(counts.wer());
                runs.push(fitted.record);
            }
        }
    }
    Ok(ExperimentReport::new(
        Provenance::new("run-corruption", cfg.seed, cfg),
        ExperimentKind::Corruption,
        cfg.replicates,
        runs,
    ))
}

/// Replaces each utterance's tokens by the teacher's greedy hypothesis and
/// attaches the teacher's confidences for that hypothesis.
pub fn pseudo_label(teacher: &TransducerModel, unlabeled: &[Utterance], max_symbols_per_frame: usize) -> Result<Vec<Utterance>> {
    let hyps = decode_dataset(teacher, unlabeled, max_symbols_per_frame)?;
    if hyps.iter().all(Vec::is_empty) {
        return Err(Error::Data("every pseudo-label hypothesis is empty".into()));
    }
    let mut out: Vec<Utterance> =
        unlabeled.iter().zip(hyps).map(|(u, h)| Utterance::new(u.id.clone(), u.features.clone(), h)).collect();
    score_confidences(teacher, &mut out)?;
    Ok(out)
}

/// Iterative pseudo-labeling. Round 0 trains on `labeled` alone; in round
/// `r` each mode's round `r - 1` model labels `unlabeled` and a fresh student
/// is trained on the labeled and pseudo-labeled utterances mixed at the
/// configured ratio. Labeled utterances carry confidence 1.
pub fn run_pseudo_labeling(
    labeled: &Dataset,
    unlabeled: &Dataset,
    validation: &Dataset,
    test: &Dataset,
    cfg: &GenerationConfig,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    for (d, what) in [(labeled, "labeled"), (unlabeled, "unlabeled"), (validation, "validation"), (test, "test")] {
        require_nonempty(d, what)?;
    }
    check_disjoint(labeled, unlabeled, "labeled/unlabeled")?;
    let dims = cfg.student.dims(labeled);
    let eval = EvalSets { validation: &validation.utterances, test: &test.utterances };
    let mut labeled_utts = labeled.utterances.clone();
    for u in &mut labeled_utts {
        u.confidences = None;
        u.final_blank_logp = None;
        u.lambda = None;
    }
    let mut runs = Vec::new();
    for replicate in 0..cfg.replicates {
        let rep = replicate_seed(cfg.seed, replicate);
        let base_pool = [Pool { utterances: &labeled_utts, share: 1.0 }];
        let base = fit_mode(
            dims,
            &base_pool,
            Mode::Standard,
            &[],
            &cfg.student,
            rep.child("round=0"),
            &eval,
            Condition::Round { round: 0 },
            replicate,
        )?;
        runs.push(base.record);
        let base_model =
            base.model.ok_or_else(|| Error::Diverged(format!("replicate {replicate}: base model diverged")))?;
        let mut teachers: Vec<Option<TransducerModel>> = vec![Some(base_model); cfg.modes.len()];
        for round in 1..=cfg.rounds {
            let seed = rep.child(&format!("round={round}"));
            for (i, &mode) in cfg.modes.iter().enumerate() {
                let condition = Condition::Round { round };
                let Some(teacher) = teachers[i].take() else {
                    runs.push(failed_record(replicate, condition, mode, "teacher from the previous round diverged"));
                    continue;
                };
                let pseudo = pseudo_label(&teacher, &unlabeled.utterances, cfg.student.max_symbols_per_frame)?;
                let pools = [
                    Pool { utterances: &labeled_utts, share: cfg.labeled_to_pseudo_ratio.0 },
                    Pool { utterances: &pseudo, share: cfg.labeled_to_pseudo_ratio.1 },
                ];
                let fitted = fit_mode(dims, &pools, mode, &cfg.alpha_grid, &cfg.student, seed, &eval, condition, replicate)?;
                runs.push(fitted.record);
                teachers[i] = fitted.model;
            }
        }
    }
    Ok(ExperimentReport::new(
        Provenance::new("run-pseudolabel", cfg.seed, cfg),
        ExperimentKind::PseudoLabeling,
        cfg.replicates,
        runs,
    ))
}

fn failed_record(replicate: usize, condition: Condition, mode: Mode, why: &str) -> RunRecord {
    RunRecord {
        replicate,
        condition,
        mode,
        chosen_alpha: None,
        validation_wer: 1.0,
        test_wer: 1.0,
        final_train_loss: None,
        sweep: Vec::new(),
        reference_wer: None,
        failure: Some(why.to_string()),
    }
}
