//! Conditional token probabilities `P(y_u | y_<u)` for transducer lattices.
//!
//! The prefix mass `P(y_<u+1)` is the total probability of every partial
//! alignment that ends with the emission of `y_u`, whatever happens afterwards.
//! It is factorized over the frame at which `y_u` is emitted:
//!
//! ```text
//! A(t, u) = log P(y_1..y_u, y_u emitted at frame t)
//!         = logsumexp_{t' <= t} [ A(t', u-1) + blank_run(t' -> t, u-1) ] + logp(t, u-1, y_u)
//! ```
//!
//! where `blank_run(t' -> t, u-1)` sums blank log-probabilities at frames
//! `t', .., t-1` on row `u-1`, and the boundary is `A(0, 0) = 0`, `A(t, 0) = -inf`
//! for `t > 0`. Conditionals are ratios of consecutive prefix masses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{log_add, log_sum_exp, LabelSequence, PosteriorLattice};

/// Joint emission masses `A(t, u)` for `u = 1..=U` and the prefix masses they sum to.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionForward {
    frames: usize,
    labels: usize,
    /// Row-major `T x U`; column `u - 1` holds `A(., u)`.
    emission: Vec<f64>,
    /// `prefix_logp[u] = log P(y_<u+1)`, with `prefix_logp[0] = 0`.
    pub prefix_logp: Vec<f64>,
}

impl EmissionForward {
    /// `A(t, u)` for zero-based frame `t` and one-based token index `u`.
    pub fn at(&self, t: usize, u: usize) -> f64 {
        assert!(u >= 1 && u <= self.labels, "token index {u} out of 1..={}", self.labels);
        self.emission[t * self.labels + u - 1]
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }
}

fn check(lattice: &PosteriorLattice, y: &LabelSequence) -> Result<()> {
    if y.is_empty() {
        return Err(Error::EmptyLabels);
    }
    lattice.check_labels(y)
}

/// Direct evaluation of the emission-time recursion: for every target frame the
/// inner sum runs over all earlier emission frames with an explicit blank run.
/// `O(T^2 U)` time.
pub fn emission_forward(lattice: &PosteriorLattice, y: &LabelSequence) -> Result<EmissionForward> {
    check(lattice, y)?;
    let (frames, labels) = (lattice.frames(), lattice.labels());
    let tokens = y.tokens();
    let mut emission = vec![f64::NEG_INFINITY; frames * labels];
    let mut prefix_logp = vec![0.0; labels + 1];
    // `prev[t']` is A(t', u-1); for u-1 = 0 only the start frame carries mass.
    let mut prev = vec![f64::NEG_INFINITY; frames];
    prev[0] = 0.0;
    for u in 1..=labels {
        let row = u - 1;
        let token = tokens[row];
        let mut current = vec![f64::NEG_INFINITY; frames];
        for t in 0..frames {
            let mut acc = f64::NEG_INFINITY;
            let mut run = 0.0;
            // t' from t down to 0; `run` accumulates blanks at frames t'..t-1.
            for start in (0..=t).rev() {
                if start < t {
                    run += lattice.blank(start, row);
                }
                acc = log_add(acc, prev[start] + run);
            }
            current[t] = acc + lattice.get(t, row, token);
            emission[t * labels + row] = current[t];
        }
        prefix_logp[u] = log_sum_exp(&current);
        prev = current;
    }
    Ok(EmissionForward { frames, labels, emission, prefix_logp })
}

/// Same quantities as [`emission_forward`] in `O(T U)` time: the inner sum over
/// start frames is carried as a running log-mass that absorbs one blank per frame.
pub fn emission_forward_fast(lattice: &PosteriorLattice, y: &LabelSequence) -> Result<EmissionForward> {
    check(lattice, y)?;
    let (frames, labels) = (lattice.frames(), lattice.labels());
    let tokens = y.tokens();
    let mut emission = vec![f64::NEG_INFINITY; frames * labels];
    let mut prefix_logp = vec![0.0; labels + 1];
    let mut prev = vec![f64::NEG_INFINITY; frames];
    prev[0] = 0.0;
    let mut current = vec![f64::NEG_INFINITY; frames];
    for u in 1..=labels {
        let row = u - 1;
        let token = tokens[row];
        let mut running = f64::NEG_INFINITY;
        for t in 0..frames {
            running = if t == 0 { prev[0] } else { log_add(running + lattice.blank(t - 1, row), prev[t]) };
            current[t] = running + lattice.get(t, row, token);
            emission[t * labels + row] = current[t];
        }
        prefix_logp[u] = log_sum_exp(&current);
        std::mem::swap(&mut prev, &mut current);
    }
    Ok(EmissionForward { frames, labels, emission, prefix_logp })
}

/// Log-mass of staying on row `u` from each emission frame to the end and
/// leaving through the terminal blank, summed over the emission frame of `y_U`.
fn completion_logp(lattice: &PosteriorLattice, forward: &EmissionForward) -> f64 {
    let (frames, labels) = (lattice.frames(), lattice.labels());
    let mut running = f64::NEG_INFINITY;
    for t in 0..frames {
        running = if t == 0 {
            forward.at(0, labels)
        } else {
            log_add(running + lattice.blank(t - 1, labels), forward.at(t, labels))
        };
    }
    running + lattice.blank(frames - 1, labels)
}

/// Per-token conditionals and the sentence-end completion term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalProfile {
    /// `c_u = P(y_u | y_<u)` for `u = 1..=U`.
    pub conditionals: Vec<f64>,
    /// `log P(terminal blank at the last frame | y)`.
    pub final_blank_logp: f64,
    /// `sum_u log c_u + final_blank_logp`; equals the sequence log-likelihood.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loglik_check: Option<f64>,
}

impl ConditionalProfile {
    pub fn log_conditionals(&self) -> impl Iterator<Item = f64> + '_ {
        self.conditionals.iter().map(|c| c.ln())
    }

    pub fn len(&self) -> usize {
        self.conditionals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditionals.is_empty()
    }
}

/// Log-space conditionals, kept separately from [`ConditionalProfile`] so that
/// loss code does not round-trip through `exp`/`ln`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LogProfile {
    pub log_conditionals: Vec<f64>,
    pub final_blank_logp: f64,
}

pub(crate) fn log_profile(lattice: &PosteriorLattice, y: &LabelSequence) -> Result<LogProfile> {
    if y.is_empty() {
        lattice.check_labels(y)?;
        let frames = lattice.frames();
        let total: f64 = (0..frames).map(|t| lattice.blank(t, 0)).sum();
        if total == f64::NEG_INFINITY {
            return Err(Error::ZeroPrefix { u: 1 });
        }
        return Ok(LogProfile { log_conditionals: Vec::new(), final_blank_logp: total });
    }
    let forward = emission_forward_fast(lattice, y)?;
    let mut log_conditionals = Vec::with_capacity(y.len());
    for u in 1..=y.len() {
        let previous = forward.prefix_logp[u - 1];
        if previous == f64::NEG_INFINITY {
            return Err(Error::ZeroPrefix { u });
        }
        log_conditionals.push(forward.prefix_logp[u] - previous);
    }
    let last = forward.prefix_logp[y.len()];
    if last == f64::NEG_INFINITY {
        return Err(Error::ZeroPrefix { u: y.len() + 1 });
    }
    let final_blank_logp = completion_logp(lattice, &forward) - last;
    Ok(LogProfile { log_conditionals, final_blank_logp })
}

/// Conditionals `c_u = exp(prefix_logp(u) - prefix_logp(u-1))` and the final-blank term.
///
/// An empty label sequence yields no conditionals; its final-blank term is the
/// log-probability of the all-blank path.
pub fn conditional_profile(lattice: &PosteriorLattice, y: &LabelSequence) -> Result<ConditionalProfile> {
    let profile = log_profile(lattice, y)?;
    let loglik = profile.log_conditionals.iter().sum::<f64>() + profile.final_blank_logp;
    Ok(ConditionalProfile {
        conditionals: profile.log_conditionals.iter().map(|l| l.exp()).collect(),
        final_blank_logp: profile.final_blank_logp,
        loglik_check: Some(loglik),
    })
}

/// Distribution over the next output symbol after a prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextTokenDistribution {
    /// `P(y_u = k | y_<u)` for each vocabulary token `k`.
    pub tokens: Vec<f64>,
    /// Probability that the output ends after the prefix.
    pub end: f64,
}

impl NextTokenDistribution {
    pub fn total(&self) -> f64 {
        self.tokens.iter().sum::<f64>() + self.end
    }
}

/// `P(y_u = k | y_<u)` for every token `k`, plus the probability of ending.
///
/// `u` is one-based. Only lattice rows `0..u` are read, so any lattice whose
/// first `u - 1` labels agree with `prefix` can be used; the lattice must have
/// at least `u - 1` labels.
pub fn next_token_distribution(
    lattice: &PosteriorLattice,
    prefix: &LabelSequence,
    u: usize,
) -> Result<NextTokenDistribution> {
    if u == 0 {
        return Err(Error::InvalidArgument("token position u is one-based".into()));
    }
    let row = u - 1;
    if prefix.len() < row || lattice.labels() < row {
        return Err(Error::DimensionMismatch {
            expected_t: lattice.frames(),
            expected_u: row,
            actual_t: lattice.frames(),
            actual_u: prefix.len().min(lattice.labels()),
        });
    }
    let vocab = lattice.vocab();
    if let Some(&token) = prefix.tokens()[..row].iter().find(|&&t| !vocab.contains(t)) {
        return Err(Error::TokenOutOfRange { token, vocab: vocab.size() });
    }
    let frames = lattice.frames();
    let tokens = prefix.tokens();

    // alpha restricted to rows 0..=row, computed along the prefix.
    let mut alpha = vec![f64::NEG_INFINITY; frames];
    alpha[0] = 0.0;
    for t in 1..frames {
        alpha[t] = alpha[t - 1] + lattice.blank(t - 1, 0);
    }
    let mut prefix_logp = 0.0;
    for r in 1..=row {
        let token = tokens[r - 1];
        let emitted: Vec<f64> = (0..frames).map(|t| alpha[t] + lattice.get(t, r - 1, token)).collect();
        prefix_logp = log_sum_exp(&emitted);
        let mut next = vec![f64::NEG_INFINITY; frames];
        for t in 0..frames {
            next[t] = if t == 0 { emitted[0] } else { log_add(next[t - 1] + lattice.blank(t - 1, r), emitted[t]) };
        }
        alpha = next;
    }
    if prefix_logp == f64::NEG_INFINITY {
        return Err(Error::ZeroPrefix { u });
    }
    let mut dist = Vec::with_capacity(vocab.size());
    for k in 0..vocab.size() {
        let terms: Vec<f64> = (0..frames).map(|t| alpha[t] + lattice.get(t, row, k)).collect();
        dist.push((log_sum_exp(&terms) - prefix_logp).exp());
    }
    let end = (alpha[frames - 1] + lattice.blank(frames - 1, row) - prefix_logp).exp();
    Ok(NextTokenDistribution { tokens: dist, end })
}
