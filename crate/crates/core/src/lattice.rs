//! Log-domain alignment lattice primitives.
//!
//! A [`PosteriorLattice`] holds `log P(k | t, u)` for every frame `t`, label
//! position `u` and output symbol `k` (vocabulary tokens plus blank). Frames and
//! positions are zero-based in code: frame `t` runs over `0..T` and position
//! `u` over `0..=U`, where `u` counts the labels already emitted.
//!
//! Topology: from node `(t, u)` a label emission consumes `logp(t, u, y[u])`
//! and moves to `(t, u + 1)`; a blank consumes `logp(t, u, blank)` and moves to
//! `(t + 1, u)`. A path is complete when it leaves `(T - 1, U)` through a blank.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `log(exp(a) + exp(b))`, exact when either side is negative infinity.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Log-sum-exp over a slice, accumulated left to right.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Output vocabulary. Tokens are `0..size`; the blank symbol is encoded as `size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("vocabulary size must be at least 1".into()));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn blank(&self) -> usize {
        self.size
    }

    /// Number of output symbols including blank.
    pub fn symbols(&self) -> usize {
        self.size + 1
    }

    pub fn contains(&self, token: usize) -> bool {
        token < self.size
    }
}

/// Target token sequence `y_1 .. y_U`. Never contains the blank index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSequence(Vec<usize>);

impl LabelSequence {
    pub fn new(tokens: Vec<usize>, vocab: Vocabulary) -> Result<Self> {
        if let Some(&token) = tokens.iter().find(|&&t| !vocab.contains(t)) {
            return Err(Error::TokenOutOfRange { token, vocab: vocab.size() });
        }
        Ok(Self(tokens))
    }

    /// Builds a sequence without range checks; callers guarantee tokens are valid.
    pub fn from_tokens_unchecked(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prefix(&self, len: usize) -> LabelSequence {
        LabelSequence(self.0[..len].to_vec())
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }
}

impl From<LabelSequence> for Vec<usize> {
    fn from(value: LabelSequence) -> Self {
        value.0
    }
}

/// `T x (U + 1) x (|V| + 1)` table of log posteriors, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorLattice {
    frames: usize,
    positions: usize,
    vocab: Vocabulary,
    logp: Vec<f64>,
}

/// Row-sum tolerance checked when a lattice is built from log-probabilities.
pub const ROW_TOLERANCE: f64 = 1e-9;

impl PosteriorLattice {
    /// Wraps an already normalized table. Every row must log-sum-exp to zero
    /// within [`ROW_TOLERANCE`]; entries may be negative infinity but not NaN.
    pub fn from_log_probs(frames: usize, labels: usize, vocab: Vocabulary, logp: Vec<f64>) -> Result<Self> {
        let lattice = Self::from_log_probs_unnormalized(frames, labels, vocab, logp)?;
        for t in 0..frames {
            for u in 0..=labels {
                let total = log_sum_exp(lattice.row(t, u));
                if !(total.abs() <= ROW_TOLERANCE) {
                    return Err(Error::Data(format!(
                        "row (t={t}, u={u}) is not normalized: logsumexp = {total}"
                    )));
                }
            }
        }
        Ok(lattice)
    }

    /// Wraps a table without the row-normalization check. Loss functions do
    /// not require normalized rows; finite-difference probes rely on this.
    pub fn from_log_probs_unnormalized(
        frames: usize,
        labels: usize,
        vocab: Vocabulary,
        logp: Vec<f64>,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Shape("lattice needs at least one frame".into()));
        }
        let expected = frames * (labels + 1) * vocab.symbols();
        if logp.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} log-probabilities for T={frames}, U={labels}, |V|={}, got {}",
                vocab.size(),
                logp.len()
            )));
        }
        let symbols = vocab.symbols();
        if let Some(idx) = logp.iter().position(|v| v.is_nan()) {
            let (t, u, k) = (idx / (symbols * (labels + 1)), (idx / symbols) % (labels + 1), idx % symbols);
            return Err(Error::NanLogProb { t, u, k });
        }
        Ok(Self { frames, positions: labels, vocab, logp })
    }

    /// Frame count `T`.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Label count `U`; the lattice has `U + 1` positions.
    pub fn labels(&self) -> usize {
        self.positions
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    #[inline]
    pub fn index(&self, t: usize, u: usize, k: usize) -> usize {
        (t * (self.positions + 1) + u) * self.vocab.symbols() + k
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize, k: usize) -> f64 {
        self.logp[self.index(t, u, k)]
    }

    #[inline]
    pub fn blank(&self, t: usize, u: usize) -> f64 {
        self.get(t, u, self.vocab.blank())
    }

    pub fn row(&self, t: usize, u: usize) -> &[f64] {
        let start = self.index(t, u, 0);
        &self.logp[start..start + self.vocab.symbols()]
    }

    pub fn values(&self) -> &[f64] {
        &self.logp
    }

    /// Mutable access to the raw table. Writes may break row normalization.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.logp
    }

    pub fn into_values(self) -> Vec<f64> {
        self.logp
    }

    /// Checks that the lattice shape matches a label sequence.
    pub fn check_labels(&self, y: &LabelSequence) -> Result<()> {
        if y.len() != self.positions {
            return Err(Error::DimensionMismatch {
                expected_t: self.frames,
                expected_u: self.positions,
                actual_t: self.frames,
                actual_u: y.len(),
            });
        }
        if let Some(&token) = y.tokens().iter().find(|&&t| !self.vocab.contains(t)) {
            return Err(Error::TokenOutOfRange { token, vocab: self.vocab.size() });
        }
        Ok(())
    }

    /// Zero-filled table with this lattice's shape, for gradients.
    pub fn zeros_like(&self) -> GradientTable {
        GradientTable {
            frames: self.frames,
            labels: self.positions,
            vocab: self.vocab,
            values: vec![0.0; self.logp.len()],
        }
    }
}

/// Row-wise log-softmax of a raw logit table of shape `T x (U + 1) x (|V| + 1)`.
pub fn normalize_logits(frames: usize, labels: usize, vocab: Vocabulary, mut logits: Vec<f64>) -> Result<PosteriorLattice> {
    let symbols = vocab.symbols();
    let expected = frames * (labels + 1) * symbols;
    if logits.len() != expected {
        return Err(Error::Shape(format!("expected {expected} logits, got {}", logits.len())));
    }
    for (idx, &value) in logits.iter().enumerate() {
        if !value.is_finite() {
            let (t, u, k) = (idx / (symbols * (labels + 1)), (idx / symbols) % (labels + 1), idx % symbols);
            return Err(Error::NonFiniteLogit { t, u, k, value });
        }
    }
    for row in logits.chunks_mut(symbols) {
        let norm = log_sum_exp(row);
        for v in row.iter_mut() {
            *v -= norm;
        }
    }
    PosteriorLattice::from_log_probs_unnormalized(frames, labels, vocab, logits)
}

/// Gradient (or any per-cell quantity) shaped like a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTable {
    frames: usize,
    labels: usize,
    vocab: Vocabulary,
    values: Vec<f64>,
}

impl GradientTable {
    pub fn new(frames: usize, labels: usize, vocab: Vocabulary, values: Vec<f64>) -> Result<Self> {
        if values.len() != frames * (labels + 1) * vocab.symbols() {
            return Err(Error::Shape(format!("gradient table has {} values", values.len())));
        }
        Ok(Self { frames, labels, vocab, values })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    #[inline]
    pub fn index(&self, t: usize, u: usize, k: usize) -> usize {
        (t * (self.labels + 1) + u) * self.vocab.symbols() + k
    }

    #[inline]
    pub fn get(&self, t: usize, u: usize, k: usize) -> f64 {
        self.values[self.index(t, u, k)]
    }

    #[inline]
    pub fn add(&mut self, t: usize, u: usize, k: usize, v: f64) {
        let i = self.index(t, u, k);
        self.values[i] += v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Forward variables: `alpha[t][u]` is the log-mass of all partial paths that
/// emit `y[..u]` and sit at node `(t, u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardVariables {
    pub frames: usize,
    pub labels: usize,
    pub alpha: Vec<f64>,
    pub loglik: f64,
}

impl ForwardVariables {
    #[inline]
    pub fn at(&self, t: usize, u: usize) -> f64 {
        self.alpha[t * (self.labels + 1) + u]
    }
}

/// Backward variables: `beta[t][u]` is the log-mass of all completions from `(t, u)`,
/// including the terminal blank.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardVariables {
    pub frames: usize,
    pub labels: usize,
    pub beta: Vec<f64>,
    pub loglik: f64,
}

impl BackwardVariables {
    #[inline]
    pub fn at(&self, t: usize, u: usize) -> f64 {
        self.beta[t * (self.labels + 1) + u]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardBackwardTables {
    pub forward: ForwardVariables,
    pub backward: BackwardVariables,
}

impl ForwardBackwardTables {
    pub fn loglik(&self) -> f64 {
        self.forward.loglik
    }

    /// Log-mass of all paths through node `(t, u)`.
    pub fn occupancy(&self, t: usize, u: usize) -> f64 {
        self.forward.at(t, u) + self.backward.at(t, u)
    }
}

/// Forward sweep in ascending `t`, then `u`.
pub fn forward(lattice: &PosteriorLattice, y: &LabelSequence) -> Result<ForwardVariables> {
    lattice.check_labels(y)?;
    let (frames, labels) = (lattice.frames(), lattice.labels());
    let width = labels + 1;
    let tokens = y.tokens();
    let mut alpha = vec![f64::NEG_INFINITY; frames * width];
    alpha[0] = 0.0;
    for t in 0..frames {
        for u in 0..=labels {
            if t == 0 && u == 0 {
                continue;
            }
            let from_blank = if t > 0 {
                alpha[(t - 1) * width + u] + lattice.blank(t - 1, u)
            } else {
                f64::NEG_INFINITY
            };
            let from_emit = if u > 0 {
                alpha[t * width + u - 1] + lattice.get(t, u - 1, tokens[u - 1])
            } else {
                f64::NEG_INFINITY
            };
            alpha[t * width + u] = log_add(from_blank, from_emit);
        }
    }
    let loglik = alpha[(frames - 1) * width + labels] + lattice.blank(frames - 1, labels);
    Ok(ForwardVariables { frames, labels, alpha, loglik })
}

/// Backward sweep, mirror image of [`forward`].
pub fn backward(lattice: &PosteriorLattice, y: &LabelSequence) -> Result<BackwardVariables> {
    lattice.check_labels(y)?;
    let (frames, labels) = (lattice.frames(), lattice.labels());
    let width = labels + 1;
    let tokens = y.tokens();
    let mut beta = vec![f64::NEG_INFINITY; frames * width];
    for t in (0..frames).rev() {
        for u in (0..=labels).rev() {
            let via_blank = if t + 1 < frames {
                beta[(t + 1) * width + u] + lattice.blank(t, u)
            } else if u == labels {
                lattice.blank(t, u)
            } else {
                f64::NEG_INFINITY
            };
            let via_emit = if u < labels {
                beta[t * width + u + 1] + lattice.get(t, u, tokens[u])
            } else {
                f64::NEG_INFINITY
            };
            beta[t * width + u] = log_add(via_blank, via_emit);
        }
    }
    let loglik = beta[0];
    Ok(BackwardVariables { frames, labels, beta, loglik })
}

pub fn forward_backward(lattice: &PosteriorLattice, y: &LabelSequence) -> Result<ForwardBackwardTables> {
    Ok(ForwardBackwardTables { forward: forward(lattice, y)?, backward: backward(lattice, y)? })
}

/// Standard transducer loss `-log P(y | x)`. Infinite when `y` is unreachable.
pub fn rnnt_loss(lattice: &PosteriorLattice, y: &LabelSequence) -> Result<f64> {
    Ok(-forward(lattice, y)?.loglik)
}

/// Gradient of [`rnnt_loss`] with respect to every lattice log-probability.
///
/// Cells not used by the label sequence (tokens other than `y[u]` and blank)
/// and cells unreachable by any alignment get exactly zero.
pub fn rnnt_loss_grad(lattice: &PosteriorLattice, y: &LabelSequence) -> Result<GradientTable> {
    let tables = forward_backward(lattice, y)?;
    let loglik = tables.loglik();
    if loglik == f64::NEG_INFINITY {
        return Err(Error::ZeroProbability);
    }
    let (frames, labels) = (lattice.frames(), lattice.labels());
    let blank = lattice.vocab().blank();
    let tokens = y.tokens();
    let mut grad = lattice.zeros_like();
    for t in 0..frames {
        for u in 0..=labels {
            let a = tables.forward.at(t, u);
            if a == f64::NEG_INFINITY {
                continue;
            }
            let next = if t + 1 < frames {
                tables.backward.at(t + 1, u)
            } else if u == labels {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            let occ = a + lattice.blank(t, u) + next - loglik;
            grad.add(t, u, blank, -occ.exp());
            if u < labels {
                let occ = a + lattice.get(t, u, tokens[u]) + tables.backward.at(t, u + 1) - loglik;
                grad.add(t, u, tokens[u], -occ.exp());
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::new(n).unwrap()
    }

    #[test]
    fn log_add_handles_infinities() {
        assert_eq!(log_add(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert_eq!(log_add(f64::NEG_INFINITY, -1.5), -1.5);
        assert!((log_add(0.5f64.ln(), 0.5f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn uniform_logits_normalize_to_thirds() {
        let lat = normalize_logits(1, 0, vocab(2), vec![0.7, 0.7, 0.7]).unwrap();
        for &v in lat.values() {
            assert!((v - (1.0f64 / 3.0).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_blank_row() {
        let big = 800.0;
        let lat = normalize_logits(1, 0, vocab(2), vec![0.0, 0.0, big]).unwrap();
        assert!(lat.blank(0, 0).abs() < 1e-300);
        assert!((lat.get(0, 0, 0) + big).abs() < 1e-9);
    }

    #[test]
    fn non_finite_logit_names_cell() {
        let mut logits = vec![0.0; 2 * 2 * 3];
        // (t=1, u=1, k=2)
        logits[3 * 3 + 2] = f64::NAN;
        match normalize_logits(2, 1, vocab(2), logits) {
            Err(Error::NonFiniteLogit { t: 1, u: 1, k: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_path_lattices() {
        let half = 0.5f64.ln();
        // T=1, U=1, |V|=1: rows (y, blank).
        let lat = PosteriorLattice::from_log_probs(1, 1, vocab(1), vec![half, half, f64::NEG_INFINITY, 0.0]).unwrap();
        let y = LabelSequence::new(vec![0], vocab(1)).unwrap();
        let loss = rnnt_loss(&lat, &y).unwrap();
        assert!((loss + half).abs() < 1e-15);

        let lat = PosteriorLattice::from_log_probs(1, 1, vocab(1), vec![half, half, half, half]).unwrap();
        let loss = rnnt_loss(&lat, &y).unwrap();
        assert!((loss + 0.25f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn all_blank_path_when_no_labels() {
        let lat = normalize_logits(2, 0, vocab(2), vec![0.1, 0.2, 0.3, -1.0, 2.0, 0.5]).unwrap();
        let y = LabelSequence::default();
        let fwd = forward(&lat, &y).unwrap();
        assert!((fwd.loglik - (lat.blank(0, 0) + lat.blank(1, 0))).abs() < 1e-15);
        let grad = rnnt_loss_grad(&lat, &y).unwrap();
        for t in 0..2 {
            assert_eq!(grad.get(t, 0, 2), -1.0);
            assert_eq!(grad.get(t, 0, 0), 0.0);
            assert_eq!(grad.get(t, 0, 1), 0.0);
        }
    }

    #[test]
    fn backward_terminal_cell() {
        let lat = normalize_logits(1, 0, vocab(3), vec![0.3, -0.2, 1.0, 0.0]).unwrap();
        let bwd = backward(&lat, &LabelSequence::default()).unwrap();
        assert_eq!(bwd.at(0, 0), lat.blank(0, 0));
    }

    #[test]
    fn mismatched_labels_are_rejected() {
        let lat = normalize_logits(2, 1, vocab(2), vec![0.0; 12]).unwrap();
        let y = LabelSequence::new(vec![0, 1], vocab(2)).unwrap();
        assert!(matches!(
            forward(&lat, &y),
            Err(Error::DimensionMismatch { expected_u: 1, actual_u: 2, .. })
        ));
    }

    #[test]
    fn hard_zero_blocks_all_paths() {
        let mut lat = normalize_logits(1, 1, vocab(1), vec![0.0; 4]).unwrap();
        lat.values_mut()[0] = f64::NEG_INFINITY;
        let y = LabelSequence::new(vec![0], vocab(1)).unwrap();
        assert_eq!(rnnt_loss(&lat, &y).unwrap(), f64::INFINITY);
        assert_eq!(rnnt_loss_grad(&lat, &y), Err(Error::ZeroProbability));
    }
}
