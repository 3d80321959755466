//! Confidence-derived token weights and the token-weighted transducer objective.
//!
//! The objective is
//!
//! ```text
//! L_w = -sum_u lambda_u log P(y_u | y_<u) - w_end log P(end | y)
//! ```
//!
//! where `w_end` scales the terminal-blank term. With every weight equal to one
//! it is exactly the standard transducer loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{forward, log_add, log_sum_exp, GradientTable, LabelSequence, PosteriorLattice};
use crate::token_conditional::{log_profile, ConditionalProfile};

/// Scope over which token weights are normalized to mean one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    PerUtterance,
    #[default]
    PerBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub alpha: f64,
    #[serde(default = "default_final_blank_weight")]
    pub final_blank_weight: f64,
    #[serde(default)]
    pub normalization: Normalization,
}

fn default_final_blank_weight() -> f64 {
    1.0
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self { alpha: 1.0, final_blank_weight: 1.0, normalization: Normalization::PerBatch }
    }
}

impl WeightConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self { alpha, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !self.final_blank_weight.is_finite() {
            return Err(Error::InvalidArgument("final_blank_weight must be finite".into()));
        }
        Ok(())
    }
}

/// Per-token weights for one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeights {
    pub lambdas: Vec<f64>,
    /// Multiplier on the terminal-blank term.
    pub final_blank_weight: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_confidences: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<WeightConfig>,
}

impl TokenWeights {
    /// All-ones weights; the weighted objective reduces to the standard loss.
    pub fn uniform(len: usize) -> Self {
        Self::constant(len, 1.0)
    }

    /// The same weight on every token and on the terminal blank.
    pub fn constant(len: usize, weight: f64) -> Self {
        Self { lambdas: vec![weight; len], final_blank_weight: weight, source_confidences: Vec::new(), config: None }
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// True when every weight, the terminal one included, is exactly one.
    pub fn is_uniform(&self) -> bool {
        self.final_blank_weight == 1.0 && self.lambdas.iter().all(|&l| l == 1.0)
    }
}

fn check_confidences(confidences: &[f64], offset: usize) -> Result<()> {
    for (i, &c) in confidences.iter().enumerate() {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::InvalidConfidence { index: offset + i, value: c });
        }
    }
    Ok(())
}

/// `lambda_u = c_u^alpha / mean(c^alpha)`, the mean taken over the configured scope.
///
/// In [`Normalization::PerBatch`] mode the mean runs over every token of every
/// utterance in `confidences`; utterances without tokens are allowed as long as
/// the batch has at least one token. In [`Normalization::PerUtterance`] mode each
/// utterance must have at least one token.
pub fn compute_weights(confidences: &[&[f64]], config: &WeightConfig) -> Result<Vec<TokenWeights>> {
    config.validate()?;
    let mut offset = 0;
    for c in confidences {
        check_confidences(c, offset)?;
        offset += c.len();
    }
    let powered: Vec<Vec<f64>> = confidences
        .iter()
        .map(|c| c.iter().map(|&x| if config.alpha == 0.0 { 1.0 } else { x.powf(config.alpha) }).collect())
        .collect();
    let make = |lambdas: Vec<f64>, source: &[f64]| TokenWeights {
        lambdas,
        final_blank_weight: config.final_blank_weight,
        source_confidences: source.to_vec(),
        config: Some(*config),
    };
    match config.normalization {
        Normalization::PerBatch => {
            let count: usize = powered.iter().map(Vec::len).sum();
            if count == 0 {
                return Err(Error::EmptyScope);
            }
            let mean = powered.iter().flatten().sum::<f64>() / count as f64;
            if !(mean > 0.0) {
                return Err(Error::InvalidArgument(format!("confidence powers underflow at alpha={}", config.alpha)));
            }
            Ok(powered
                .into_iter()
                .zip(confidences)
                .map(|(p, c)| make(p.into_iter().map(|x| x / mean).collect(), c))
                .collect())
        }
        Normalization::PerUtterance => powered
            .into_iter()
            .zip(confidences)
            .map(|(p, c)| {
                if p.is_empty() {
                    return Err(Error::EmptyScope);
                }
                let mean = p.iter().sum::<f64>() / p.len() as f64;
                if !(mean > 0.0) {
                    return Err(Error::InvalidArgument(format!("confidence powers underflow at alpha={}", config.alpha)));
                }
                Ok(make(p.into_iter().map(|x| x / mean).collect(), c))
            })
            .collect(),
    }
}

/// Convenience wrapper taking conditional profiles directly.
pub fn compute_weights_from_profiles(profiles: &[ConditionalProfile], config: &WeightConfig) -> Result<Vec<TokenWeights>> {
    let slices: Vec<&[f64]> = profiles.iter().map(|p| p.conditionals.as_slice()).collect();
    compute_weights(&slices, config)
}

/// Utterance confidence: mean token confidence, or the terminal-blank
/// probability for an utterance with no tokens.
pub fn utterance_confidence(confidences: &[f64], final_blank_logp: f64) -> f64 {
    if confidences.is_empty() {
        final_blank_logp.exp()
    } else {
        confidences.iter().sum::<f64>() / confidences.len() as f64
    }
}

/// Utterance-level baseline: one weight per utterance, `conf^alpha` normalized to
/// mean one across the batch, applied to every token and to the terminal blank.
pub fn utterance_weights(utterance_confidences: &[f64], token_counts: &[usize], alpha: f64) -> Result<Vec<TokenWeights>> {
    WeightConfig::with_alpha(alpha).validate()?;
    if utterance_confidences.is_empty() {
        return Err(Error::EmptyScope);
    }
    if token_counts.len() != utterance_confidences.len() {
        return Err(Error::Shape("one token count per utterance required".into()));
    }
    check_confidences(utterance_confidences, 0)?;
    let powered: Vec<f64> =
        utterance_confidences.iter().map(|&c| if alpha == 0.0 { 1.0 } else { c.powf(alpha) }).collect();
    let mean = powered.iter().sum::<f64>() / powered.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::InvalidArgument(format!("confidence powers underflow at alpha={alpha}")));
    }
    Ok(powered
        .iter()
        .zip(token_counts)
        .map(|(&p, &n)| TokenWeights::constant(n, p / mean))
        .collect())
}

fn check_alignment(y: &LabelSequence, weights: &TokenWeights) -> Result<()> {
    if weights.lambdas.len() != y.len() {
        return Err(Error::MisalignedWeights { weights: weights.lambdas.len(), tokens: y.len() });
    }
    Ok(())
}

/// `sum_u lambda_u (-log c_u) + w_end (-log P(end | y))`. Zero-weight terms are
/// skipped, so a zero weight on an impossible token contributes nothing.
pub fn weighted_rnnt_loss(lattice: &PosteriorLattice, y: &LabelSequence, weights: &TokenWeights) -> Result<f64> {
    check_alignment(y, weights)?;
    let profile = log_profile(lattice, y)?;
    let mut loss = 0.0;
    for (&lambda, &logc) in weights.lambdas.iter().zip(&profile.log_conditionals) {
        if lambda != 0.0 {
            loss -= lambda * logc;
        }
    }
    if weights.final_blank_weight != 0.0 {
        loss -= weights.final_blank_weight * profile.final_blank_logp;
    }
    Ok(loss)
}

/// Gradient of [`weighted_rnnt_loss`] with respect to lattice log-probabilities.
///
/// The objective telescopes into `-(sum_u (lambda_u - lambda_{u+1}) log P(y_<u+1) + w_end log P(y))`
/// with `lambda_{U+1} = w_end`. One reverse sweep over the forward recursion
/// propagates all prefix terms at once; positive and negative coefficients are
/// carried in separate log-domain accumulators.
pub fn weighted_rnnt_loss_grad(
    lattice: &PosteriorLattice,
    y: &LabelSequence,
    weights: &TokenWeights,
) -> Result<GradientTable> {
    check_alignment(y, weights)?;
    let fwd = forward(lattice, y)?;
    let (frames, labels) = (lattice.frames(), lattice.labels());
    let width = labels + 1;
    let blank = lattice.vocab().blank();
    let tokens = y.tokens();
    let w_end = weights.final_blank_weight;

    // Prefix masses and their coefficients, indexed by one-based token u.
    let mut source_pos = vec![f64::NEG_INFINITY; labels + 1];
    let mut source_neg = vec![f64::NEG_INFINITY; labels + 1];
    for u in 1..=labels {
        let next = if u == labels { w_end } else { weights.lambdas[u] };
        let coeff = weights.lambdas[u - 1] - next;
        if coeff == 0.0 {
            continue;
        }
        let terms: Vec<f64> = (0..frames).map(|t| fwd.at(t, u - 1) + lattice.get(t, u - 1, tokens[u - 1])).collect();
        let prefix = log_sum_exp(&terms);
        if prefix == f64::NEG_INFINITY {
            return Err(Error::ZeroPrefix { u });
        }
        if coeff > 0.0 {
            source_pos[u] = coeff.ln() - prefix;
        } else {
            source_neg[u] = (-coeff).ln() - prefix;
        }
    }
    let loglik = fwd.loglik;
    let (mut end_pos, mut end_neg) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    if w_end != 0.0 {
        if loglik == f64::NEG_INFINITY {
            return Err(Error::ZeroProbability);
        }
        if w_end > 0.0 {
            end_pos = w_end.ln() - loglik;
        } else {
            end_neg = (-w_end).ln() - loglik;
        }
    }

    // Adjoints of the probability-space forward variables, split by sign.
    let mut adj_pos = vec![f64::NEG_INFINITY; frames * width];
    let mut adj_neg = vec![f64::NEG_INFINITY; frames * width];
    let mut grad = lattice.zeros_like();
    for t in (0..frames).rev() {
        for u in (0..=labels).rev() {
            let lb = lattice.blank(t, u);
            let (blank_pos, blank_neg) = if t + 1 < frames {
                (adj_pos[(t + 1) * width + u], adj_neg[(t + 1) * width + u])
            } else if u == labels {
                (end_pos, end_neg)
            } else {
                (f64::NEG_INFINITY, f64::NEG_INFINITY)
            };
            let mut pos = lb + blank_pos;
            let mut neg = lb + blank_neg;
            let a = fwd.at(t, u);
            let mut d_blank = 0.0;
            if a != f64::NEG_INFINITY {
                d_blank = (a + lb + blank_pos).exp() - (a + lb + blank_neg).exp();
            }
            grad.add(t, u, blank, -d_blank);
            if u < labels {
                let le = lattice.get(t, u, tokens[u]);
                let emit_pos = log_add(adj_pos[t * width + u + 1], source_pos[u + 1]);
                let emit_neg = log_add(adj_neg[t * width + u + 1], source_neg[u + 1]);
                pos = log_add(pos, le + emit_pos);
                neg = log_add(neg, le + emit_neg);
                if a != f64::NEG_INFINITY {
                    let d_emit = (a + le + emit_pos).exp() - (a + le + emit_neg).exp();
                    grad.add(t, u, tokens[u], -d_emit);
                }
            }
            adj_pos[t * width + u] = pos;
            adj_neg[t * width + u] = neg;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{normalize_logits, rnnt_loss, rnnt_loss_grad, Vocabulary};

    fn lattice() -> (PosteriorLattice, LabelSequence) {
        let vocab = Vocabulary::new(3).unwrap();
        let logits: Vec<f64> = (0..3 * 3 * 4).map(|i| (((i * 53) % 17) as f64) * 0.21 - 1.3).collect();
        (normalize_logits(3, 2, vocab, logits).unwrap(), LabelSequence::new(vec![1, 2], vocab).unwrap())
    }

    #[test]
    fn uniform_confidences_give_unit_weights() {
        for alpha in [0.0, 1.0, 3.5, 8.0] {
            let w = compute_weights(&[&[0.5, 0.5]], &WeightConfig::with_alpha(alpha)).unwrap();
            for l in &w[0].lambdas {
                assert!((l - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn linear_alpha_example() {
        let w = compute_weights(&[&[1.0, 0.25]], &WeightConfig::with_alpha(1.0)).unwrap();
        assert!((w[0].lambdas[0] - 1.6).abs() < 1e-15);
        assert!((w[0].lambdas[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn zero_alpha_ignores_confidence() {
        let w = compute_weights(&[&[0.9, 0.01, 0.3], &[0.2]], &WeightConfig::with_alpha(0.0)).unwrap();
        assert!(w.iter().flat_map(|w| &w.lambdas).all(|&l| l == 1.0));
    }

    #[test]
    fn per_batch_mean_spans_utterances() {
        let w = compute_weights(&[&[1.0], &[0.5, 0.5, 0.5]], &WeightConfig::with_alpha(1.0)).unwrap();
        // mean c = 2.5 / 4
        assert!((w[0].lambdas[0] - 1.6).abs() < 1e-15);
        assert!((w[1].lambdas[2] - 0.8).abs() < 1e-15);
        let per_utt = WeightConfig { normalization: Normalization::PerUtterance, ..WeightConfig::with_alpha(1.0) };
        let w = compute_weights(&[&[1.0], &[0.5, 0.5, 0.5]], &per_utt).unwrap();
        assert_eq!(w[0].lambdas, vec![1.0]);
        assert_eq!(w[1].lambdas, vec![1.0; 3]);
    }

    #[test]
    fn weight_errors() {
        assert_eq!(compute_weights(&[], &WeightConfig::default()), Err(Error::EmptyScope));
        assert_eq!(compute_weights(&[&[]], &WeightConfig::default()), Err(Error::EmptyScope));
        assert!(matches!(
            compute_weights(&[&[0.5], &[0.0]], &WeightConfig::default()),
            Err(Error::InvalidConfidence { index: 1, .. })
        ));
        assert!(compute_weights(&[&[0.5]], &WeightConfig::with_alpha(-1.0)).is_err());
        let per_utt = WeightConfig { normalization: Normalization::PerUtterance, ..WeightConfig::default() };
        assert_eq!(compute_weights(&[&[0.5], &[]], &per_utt), Err(Error::EmptyScope));
    }

    #[test]
    fn utterance_weights_average_to_one() {
        let w = utterance_weights(&[0.9, 0.3], &[2, 3], 2.0).unwrap();
        let mean = (w[0].final_blank_weight + w[1].final_blank_weight) / 2.0;
        assert!((mean - 1.0).abs() < 1e-15);
        assert_eq!(w[1].lambdas.len(), 3);
        assert!(w[1].lambdas.iter().all(|&l| l == w[1].final_blank_weight));
    }

    #[test]
    fn unit_weights_reduce_to_standard_loss() {
        let (lat, y) = lattice();
        let w = TokenWeights::uniform(2);
        let lw = weighted_rnnt_loss(&lat, &y, &w).unwrap();
        assert!((lw - rnnt_loss(&lat, &y).unwrap()).abs() < 1e-12);
        let g = weighted_rnnt_loss_grad(&lat, &y, &w).unwrap();
        let s = rnnt_loss_grad(&lat, &y).unwrap();
        for (a, b) in g.values().iter().zip(s.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_vanish() {
        let (lat, y) = lattice();
        let w = TokenWeights::constant(2, 0.0);
        assert_eq!(weighted_rnnt_loss(&lat, &y, &w).unwrap(), 0.0);
        assert!(weighted_rnnt_loss_grad(&lat, &y, &w).unwrap().values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn misaligned_weights() {
        let (lat, y) = lattice();
        assert_eq!(
            weighted_rnnt_loss(&lat, &y, &TokenWeights::uniform(3)),
            Err(Error::MisalignedWeights { weights: 3, tokens: 2 })
        );
    }
}
