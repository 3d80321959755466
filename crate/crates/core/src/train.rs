//! Mini-batch training, evaluation and confidence scoring.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Utterance};
use crate::error::{Error, Result};
use crate::lattice::{rnnt_loss, rnnt_loss_grad, LabelSequence};
use crate::model::{adam_step, greedy_decode, AdamHyper, AdamState, ModelDims, ModelScorer, Precision, TransducerModel};
use crate::rng::SeedTree;
use crate::ssl::wer::{edit_counts, EditCounts};
use crate::token_conditional::conditional_profile;
use crate::weighted_loss::{
    compute_weights, utterance_confidence, utterance_weights, weighted_rnnt_loss, weighted_rnnt_loss_grad,
    Normalization, TokenWeights, WeightConfig,
};

/// How per-token weights are obtained for a training batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Weighting {
    /// Plain transducer loss.
    #[default]
    Standard,
    /// One weight per utterance: its mean token confidence to the power `alpha`,
    /// normalized to mean one over the batch's utterances.
    UtteranceWeights { alpha: f64 },
    /// Token weights `c_u^alpha`, normalized to mean one over the batch's tokens.
    TokenWeights { alpha: f64 },
    /// Use each utterance's stored `lambda` field; utterances without one get unit weights.
    Precomputed,
}

impl Weighting {
    pub fn name(&self) -> &'static str {
        match self {
            Weighting::Standard => "standard",
            Weighting::UtteranceWeights { .. } => "utterance_weights",
            Weighting::TokenWeights { .. } => "token_weights",
            Weighting::Precomputed => "precomputed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub precision: Precision,
    pub weighting: Weighting,
    pub final_blank_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            adam: AdamHyper::default(),
            precision: Precision::F64,
            weighting: Weighting::Standard,
            final_blank_weight: 1.0,
        }
    }
}

/// A source of training utterances with its sampling share.
#[derive(Debug, Clone, Copy)]
pub struct Pool<'a> {
    pub utterances: &'a [Utterance],
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: TransducerModel,
    pub optimizer: AdamState,
    /// Mean per-token batch loss for every epoch.
    pub epoch_losses: Vec<f64>,
}

fn confidences_or_ones(utt: &Utterance) -> Vec<f64> {
    utt.confidences.clone().unwrap_or_else(|| vec![1.0; utt.tokens.len()])
}

/// Weights for every utterance of a batch; `None` means the standard loss.
pub fn batch_weights(batch: &[&Utterance], weighting: Weighting, final_blank_weight: f64) -> Result<Vec<Option<TokenWeights>>> {
    match weighting {
        Weighting::Standard => Ok(vec![None; batch.len()]),
        Weighting::Precomputed => Ok(batch
            .iter()
            .map(|u| {
                u.lambda.as_ref().map(|l| TokenWeights {
                    lambdas: l.clone(),
                    final_blank_weight,
                    source_confidences: Vec::new(),
                    config: None,
                })
            })
            .collect()),
        Weighting::TokenWeights { alpha } => {
            let conf: Vec<Vec<f64>> = batch.iter().map(|u| confidences_or_ones(u)).collect();
            let slices: Vec<&[f64]> = conf.iter().map(Vec::as_slice).collect();
            if slices.iter().all(|s| s.is_empty()) {
                return Ok(vec![None; batch.len()]);
            }
            let cfg = WeightConfig { alpha, final_blank_weight, normalization: Normalization::PerBatch };
            Ok(compute_weights(&slices, &cfg)?.into_iter().map(Some).collect())
        }
        Weighting::UtteranceWeights { alpha } => {
            let conf: Vec<f64> = batch
                .iter()
                .map(|u| match &u.confidences {
                    Some(c) => utterance_confidence(c, u.final_blank_logp.unwrap_or(0.0)),
                    None => 1.0,
                })
                .collect();
            let counts: Vec<usize> = batch.iter().map(|u| u.tokens.len()).collect();
            Ok(utterance_weights(&conf, &counts, alpha)?.into_iter().map(Some).collect())
        }
    }
}

/// Sum of per-utterance losses and their parameter gradient, accumulated into
/// `grad`. Returns `(loss_sum, token_count)`. All-ones weights take the
/// standard loss path, so they reproduce it bit for bit.
pub fn accumulate_batch(
    model: &TransducerModel,
    batch: &[&Utterance],
    weights: &[Option<TokenWeights>],
    grad: &mut [f64],
) -> Result<(f64, usize)> {
    let mut loss_sum = 0.0;
    let mut tokens = 0;
    for (utt, w) in batch.iter().zip(weights) {
        let y = LabelSequence::new(utt.tokens.clone(), model.vocab())?;
        let (lattice, cache) = model.forward_with_cache(&utt.features, &y)?;
        let (loss, dlogp) = match w.as_ref().filter(|w| !w.is_uniform()) {
            None => (rnnt_loss(&lattice, &y)?, rnnt_loss_grad(&lattice, &y)?),
            Some(w) => (weighted_rnnt_loss(&lattice, &y, w)?, weighted_rnnt_loss_grad(&lattice, &y, w)?),
        };
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss on utterance {}", utt.id)));
        }
        model.backward_with_cache(&utt.features, &lattice, &cache, &dlogp, grad)?;
        loss_sum += loss;
        tokens += utt.tokens.len();
    }
    Ok((loss_sum, tokens))
}

fn epoch_batches(pools: &[Pool<'_>], batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<(usize, usize)>> {
    let total: usize = pools.iter().map(|p| p.utterances.len()).sum();
    if pools.len() == 1 {
        let mut order: Vec<(usize, usize)> = (0..total).map(|i| (0, i)).collect();
        order.shuffle(rng);
        return order.chunks(batch_size).map(<[_]>::to_vec).collect();
    }
    let share_sum: f64 = pools.iter().filter(|p| !p.utterances.is_empty()).map(|p| p.share).sum();
    let n_batches = total.div_ceil(batch_size);
    (0..n_batches)
        .map(|_| {
            (0..batch_size)
                .map(|_| {
                    let mut r = rng.random::<f64>() * share_sum;
                    let mut chosen = 0;
                    for (i, p) in pools.iter().enumerate() {
                        if p.utterances.is_empty() {
                            continue;
                        }
                        chosen = i;
                        if r < p.share {
                            break;
                        }
                        r -= p.share;
                    }
                    (chosen, rng.random_range(0..pools[chosen].utterances.len()))
                })
                .collect()
        })
        .collect()
}

/// Trains a freshly initialized model. With one pool every epoch is a shuffled
/// pass; with several pools each batch slot is drawn from a pool with
/// probability proportional to its share, `ceil(total / batch_size)` batches per epoch.
pub fn train(dims: ModelDims, pools: &[Pool<'_>], cfg: &TrainConfig, seed: SeedTree) -> Result<TrainOutcome> {
    let mut model = TransducerModel::init(dims, seed.child("init"))?;
    model.precision = cfg.precision;
    let optimizer = AdamState::new(model.params.len());
    continue_training(model, optimizer, pools, cfg, seed)
}

/// Runs `cfg.epochs` more epochs from the given model and optimizer state.
pub fn continue_training(
    mut model: TransducerModel,
    mut optimizer: AdamState,
    pools: &[Pool<'_>],
    cfg: &TrainConfig,
    seed: SeedTree,
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    if pools.iter().all(|p| p.utterances.is_empty()) {
        return Err(Error::Data("no training utterances".into()));
    }
    if pools.iter().any(|p| !(p.share >= 0.0)) {
        return Err(Error::InvalidArgument("pool shares must be >= 0".into()));
    }
    let mut rng = seed.child("batches").rng();
    let mut grad = vec![0.0; model.params.len()];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for batch_idx in epoch_batches(pools, cfg.batch_size, &mut rng) {
            let batch: Vec<&Utterance> = batch_idx.iter().map(|&(p, i)| &pools[p].utterances[i]).collect();
            let weights = batch_weights(&batch, cfg.weighting, cfg.final_blank_weight)?;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let (loss, tokens) = accumulate_batch(&model, &batch, &weights, &mut grad)?;
            let scale = 1.0 / tokens.max(1) as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam_step(&mut model.params, &mut optimizer, &grad, &cfg.adam)
                .map_err(|e| Error::Diverged(format!("epoch {epoch}: {e}")))?;
            epoch_loss += loss;
            epoch_tokens += tokens;
        }
        epoch_losses.push(epoch_loss / epoch_tokens.max(1) as f64);
    }
    Ok(TrainOutcome { model, optimizer, epoch_losses })
}

/// Greedy hypotheses for every utterance.
pub fn decode_dataset(model: &TransducerModel, dataset: &[Utterance], max_symbols_per_frame: usize) -> Result<Vec<Vec<usize>>> {
    dataset
        .iter()
        .map(|u| Ok(greedy_decode(ModelScorer::new(model, &u.features)?, max_symbols_per_frame).0.into_inner()))
        .collect()
}

/// Corpus token error rate of greedy hypotheses against the stored tokens.
pub fn evaluate(model: &TransducerModel, dataset: &[Utterance], max_symbols_per_frame: usize) -> Result<(f64, EditCounts)> {
    let hyps = decode_dataset(model, dataset, max_symbols_per_frame)?;
    let mut total = EditCounts::default();
    for (h, u) in hyps.iter().zip(dataset) {
        total += edit_counts(h, &u.tokens);
    }
    if total.reference_len == 0 {
        return Err(Error::EmptyReference);
    }
    Ok((total.wer(), total))
}

/// Attaches teacher confidences `c_u = P(y_u | y_<u)` and the terminal-blank
/// term to every utterance. Existing weights are cleared.
pub fn score_confidences(teacher: &TransducerModel, utterances: &mut [Utterance]) -> Result<()> {
    for utt in utterances.iter_mut() {
        let y = LabelSequence::new(utt.tokens.clone(), teacher.vocab())?;
        let lattice = teacher.forward(&utt.features, &y)?;
        let profile = conditional_profile(&lattice, &y)?;
        utt.confidences = Some(profile.conditionals);
        utt.final_blank_logp = Some(profile.final_blank_logp);
        utt.lambda = None;
    }
    Ok(())
}

/// Training-set convenience: every utterance of a dataset, one pool.
pub fn single_pool(dataset: &Dataset) -> [Pool<'_>; 1] {
    [Pool { utterances: &dataset.utterances, share: 1.0 }]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    #[test]
    fn alpha_zero_weightings_match_standard_batch_loss() {
        let cfg = SyntheticConfig { n_train: 6, n_validation: 0, n_test: 0, n_pretrain: 0, ..SyntheticConfig::default() };
        let mut data = generate_synthetic(&cfg).unwrap().train;
        for (i, u) in data.utterances.iter_mut().enumerate() {
            u.confidences = Some(u.tokens.iter().enumerate().map(|(j, _)| 0.2 + 0.1 * ((i + j) % 7) as f64).collect());
            u.final_blank_logp = Some(-0.3);
        }
        let dims = ModelDims { input_dim: 8, hidden: 6, vocab_size: 8 };
        let model = TransducerModel::init(dims, SeedTree::new(1)).unwrap();
        let batch: Vec<&Utterance> = data.utterances.iter().collect();
        let mut results = Vec::new();
        for weighting in [
            Weighting::Standard,
            Weighting::TokenWeights { alpha: 0.0 },
            Weighting::UtteranceWeights { alpha: 0.0 },
        ] {
            let w = batch_weights(&batch, weighting, 1.0).unwrap();
            let mut grad = vec![0.0; model.params.len()];
            let (loss, _) = accumulate_batch(&model, &batch, &w, &mut grad).unwrap();
            results.push((loss, grad));
        }
        for (loss, grad) in &results[1..] {
            assert!((loss - results[0].0).abs() < 1e-9);
            for (a, b) in grad.iter().zip(&results[0].1) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mixed_pools_respect_shares() {
        let a: Vec<Utterance> = (0..10).map(|i| Utterance::new(format!("a{i}"), vec![vec![0.0]], vec![])).collect();
        let b: Vec<Utterance> = (0..90).map(|i| Utterance::new(format!("b{i}"), vec![vec![0.0]], vec![])).collect();
        let pools = [Pool { utterances: &a, share: 1.0 }, Pool { utterances: &b, share: 9.0 }];
        let mut rng = SeedTree::new(3).rng();
        let mut from_a = 0;
        let mut n = 0;
        for _ in 0..50 {
            for batch in epoch_batches(&pools, 10, &mut rng) {
                n += batch.len();
                from_a += batch.iter().filter(|x| x.0 == 0).count();
            }
        }
        let frac = from_a as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.01, "{frac}");
    }
}
