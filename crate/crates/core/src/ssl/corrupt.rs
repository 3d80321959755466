//! Simulated annotation errors: repeated, omitted and substituted tokens.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::ssl::wer::edit_counts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    Repeat,
    Omit,
    Substitute,
}

/// How a substitute token is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubstitutionRule {
    /// Closest other token by Euclidean distance between prototypes.
    #[default]
    NearestPrototype,
    /// Any other token, uniformly.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionConfig {
    pub error_rate: f64,
    pub seed: u64,
    #[serde(default = "all_error_types")]
    pub error_types: Vec<ErrorType>,
    #[serde(default)]
    pub substitution: SubstitutionRule,
}

fn all_error_types() -> Vec<ErrorType> {
    vec![ErrorType::Repeat, ErrorType::Omit, ErrorType::Substitute]
}

impl CorruptionConfig {
    pub fn new(error_rate: f64, seed: u64) -> Self {
        Self { error_rate, seed, error_types: all_error_types(), substitution: SubstitutionRule::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.error_rate) {
            return Err(Error::InvalidArgument(format!("error_rate must lie in [0, 1], got {}", self.error_rate)));
        }
        if self.error_types.is_empty() {
            return Err(Error::InvalidArgument("at least one error type is required".into()));
        }
        Ok(())
    }
}

/// For each token, the set of other tokens at minimal prototype distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Confusions {
    neighbours: Vec<Vec<usize>>,
}

impl Confusions {
    pub fn nearest_prototype(prototypes: &[Vec<f64>]) -> Result<Self> {
        if prototypes.len() < 2 {
            return Err(Error::InvalidArgument("substitution needs at least two tokens".into()));
        }
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let neighbours = (0..prototypes.len())
            .map(|k| {
                let d: Vec<(usize, f64)> = (0..prototypes.len())
                    .filter(|&j| j != k)
                    .map(|j| (j, dist(&prototypes[k], &prototypes[j])))
                    .collect();
                let best = d.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
                d.into_iter().filter(|x| x.1 == best).map(|x| x.0).collect()
            })
            .collect();
        Ok(Self { neighbours })
    }

    pub fn uniform(vocab_size: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::InvalidArgument("substitution needs at least two tokens".into()));
        }
        Ok(Self { neighbours: (0..vocab_size).map(|k| (0..vocab_size).filter(|&j| j != k).collect()).collect() })
    }

    pub fn candidates(&self, token: usize) -> &[usize] {
        &self.neighbours[token]
    }
}

/// Attempts at redrawing error types before the last draw is accepted.
const MAX_TYPE_DRAWS: usize = 64;

/// Corrupts one transcript. Every token is independently selected with
/// probability `error_rate`; each selected token is repeated, omitted or
/// substituted, the type drawn uniformly from the configured set.
///
/// Neighbouring errors can cancel in the edit distance (a repeat followed by
/// an omission reads as one substitution), which would push the measured error
/// rate below the configured one. The selected positions are kept fixed and
/// the types are redrawn until the edit distance equals the number of
/// selected positions.
pub fn corrupt_transcript<R: Rng>(
    tokens: &[usize],
    cfg: &CorruptionConfig,
    confusions: &Confusions,
    rng: &mut R,
) -> Vec<usize> {
    let selected: Vec<bool> = tokens.iter().map(|_| rng.random::<f64>() < cfg.error_rate).collect();
    let n_errors = selected.iter().filter(|&&s| s).count();
    let mut out = Vec::new();
    for _ in 0..MAX_TYPE_DRAWS {
        out = apply_errors(tokens, &selected, cfg, confusions, rng);
        if n_errors == 0 || edit_counts(&out, tokens).edits() == n_errors {
            break;
        }
    }
    out
}

fn apply_errors<R: Rng>(
    tokens: &[usize],
    selected: &[bool],
    cfg: &CorruptionConfig,
    confusions: &Confusions,
    rng: &mut R,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(tokens.len() + tokens.len() / 4);
    for (&token, &hit) in tokens.iter().zip(selected) {
        if !hit {
            out.push(token);
            continue;
        }
        match cfg.error_types[rng.random_range(0..cfg.error_types.len())] {
            ErrorType::Repeat => {
                out.push(token);
                out.push(token);
            }
            ErrorType::Omit => {}
            ErrorType::Substitute => {
                let c = confusions.candidates(token);
                out.push(c[rng.random_range(0..c.len())]);
            }
        }
    }
    out
}

fn confusions_for(dataset: &Dataset, cfg: &CorruptionConfig) -> Result<Confusions> {
    match cfg.substitution {
        SubstitutionRule::NearestPrototype if !dataset.header.prototypes.is_empty() => {
            Confusions::nearest_prototype(&dataset.header.prototypes)
        }
        SubstitutionRule::NearestPrototype => {
            Err(Error::Data("dataset header carries no prototypes; use uniform substitution".into()))
        }
        SubstitutionRule::Uniform => Confusions::uniform(dataset.header.vocab_size),
    }
}

/// Corrupts every transcript of a dataset. Each utterance draws from its own
/// stream keyed by its id, so results do not depend on utterance order.
/// Confidence and weight fields are dropped because the tokens changed.
pub fn corrupt_dataset(dataset: &Dataset, cfg: &CorruptionConfig) -> Result<Dataset> {
    cfg.validate()?;
    let confusions = confusions_for(dataset, cfg)?;
    let root = SeedTree::new(cfg.seed).child("corrupt");
    let mut out = dataset.clone();
    out.header.provenance = Provenance::new("corrupt", cfg.seed, cfg);
    for utt in &mut out.utterances {
        let mut rng = root.child(&utt.id).rng();
        let corrupted = corrupt_transcript(&utt.tokens, cfg, &confusions, &mut rng);
        if corrupted != utt.tokens {
            utt.tokens = corrupted;
            utt.confidences = None;
            utt.final_blank_logp = None;
            utt.lambda = None;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_is_identity() {
        let conf = Confusions::uniform(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = vec![0, 3, 1, 2, 2];
        assert_eq!(corrupt_transcript(&y, &CorruptionConfig::new(0.0, 1), &conf, &mut rng), y);
    }

    #[test]
    fn forced_repeat_duplicates_every_token() {
        let conf = Confusions::uniform(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = CorruptionConfig { error_types: vec![ErrorType::Repeat], ..CorruptionConfig::new(1.0, 1) };
        assert_eq!(corrupt_transcript(&[0, 1], &cfg, &conf, &mut rng), vec![0, 0, 1, 1]);
    }

    #[test]
    fn forced_omit_can_empty_a_transcript() {
        let conf = Confusions::uniform(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = CorruptionConfig { error_types: vec![ErrorType::Omit], ..CorruptionConfig::new(1.0, 1) };
        assert!(corrupt_transcript(&[0, 1, 3], &cfg, &conf, &mut rng).is_empty());
    }

    #[test]
    fn nearest_prototype_substitution() {
        let protos = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![5.0, 5.0], vec![5.0, 5.2]];
        let conf = Confusions::nearest_prototype(&protos).unwrap();
        assert_eq!(conf.candidates(0), &[1]);
        assert_eq!(conf.candidates(3), &[2]);
        let cfg = CorruptionConfig { error_types: vec![ErrorType::Substitute], ..CorruptionConfig::new(1.0, 1) };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(corrupt_transcript(&[0, 1, 2, 3], &cfg, &conf, &mut rng), vec![1, 0, 3, 2]);
    }

    #[test]
    fn equidistant_neighbours_are_all_candidates() {
        let protos = vec![vec![0.0], vec![1.0], vec![-1.0]];
        let conf = Confusions::nearest_prototype(&protos).unwrap();
        assert_eq!(conf.candidates(0), &[1, 2]);
    }

    #[test]
    fn rate_outside_unit_interval_rejected() {
        assert!(CorruptionConfig::new(1.5, 0).validate().is_err());
        assert!(CorruptionConfig::new(-0.1, 0).validate().is_err());
    }
}
