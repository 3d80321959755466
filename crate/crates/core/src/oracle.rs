//! Brute-force reference implementations for small instances.
//!
//! Everything here enumerates alignments explicitly and sums path
//! probabilities; nothing shares code with the dynamic programs it checks
//! beyond reading lattice cells.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::lattice::{log_sum_exp, normalize_logits, GradientTable, LabelSequence, PosteriorLattice, Vocabulary};

/// Largest number of paths any enumeration will produce.
pub const PATH_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    /// Emit the next label.
    Emit,
    /// Advance one frame without emitting.
    Blank,
}

/// An interleaving of emissions and blanks. Complete paths carry exactly `T`
/// blanks (the last one terminates at `(T-1, U)`); partial paths end with an emission.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AlignmentPath {
    pub steps: Vec<Step>,
}

impl AlignmentPath {
    /// Lattice nodes `(t, u)` visited before each step.
    pub fn nodes(&self) -> Vec<(usize, usize)> {
        let (mut t, mut u) = (0, 0);
        let mut out = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            out.push((t, u));
            match step {
                Step::Emit => u += 1,
                Step::Blank => t += 1,
            }
        }
        out
    }

    /// Log-probability of the path for labels `y`.
    pub fn log_prob(&self, lattice: &PosteriorLattice, y: &LabelSequence) -> f64 {
        let blank = lattice.vocab().blank();
        self.nodes()
            .into_iter()
            .zip(&self.steps)
            .map(|((t, u), step)| match step {
                Step::Emit => lattice.get(t, u, y.tokens()[u]),
                Step::Blank => lattice.get(t, u, blank),
            })
            .sum()
    }
}

/// `n choose k`, exact in `u128` for the sizes the guard admits.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Number of complete alignments for `T` frames and `U` labels: `C(T + U - 1, U)`.
pub fn path_count(frames: usize, labels: usize) -> u128 {
    binomial((frames + labels - 1) as u64, labels as u64)
}

/// Interleavings of `blanks` blanks and `emits` emissions, via an explicit stack.
fn interleavings(blanks: usize, emits: usize) -> Vec<Vec<Step>> {
    let mut out = Vec::new();
    let mut stack: Vec<(Vec<Step>, usize, usize)> = vec![(Vec::with_capacity(blanks + emits), blanks, emits)];
    while let Some((prefix, b, e)) = stack.pop() {
        if b == 0 && e == 0 {
            out.push(prefix);
            continue;
        }
        // Pushed in reverse so that emissions are expanded first.
        if b > 0 {
            let mut next = prefix.clone();
            next.push(Step::Blank);
            stack.push((next, b - 1, e));
        }
        if e > 0 {
            let mut next = prefix;
            next.push(Step::Emit);
            stack.push((next, b, e - 1));
        }
    }
    out
}

/// Every complete alignment of `U` labels over `T` frames.
pub fn enumerate(frames: usize, labels: usize) -> Result<Vec<AlignmentPath>> {
    if frames == 0 {
        return Err(Error::InvalidArgument("frames must be >= 1".into()));
    }
    let paths = path_count(frames, labels);
    if paths > PATH_LIMIT {
        return Err(Error::GuardExceeded { paths, limit: PATH_LIMIT });
    }
    Ok(interleavings(frames - 1, labels)
        .into_iter()
        .map(|mut steps| {
            steps.push(Step::Blank);
            AlignmentPath { steps }
        })
        .collect())
}

/// Every partial alignment that emits `u >= 1` labels and ends with the
/// emission of label `u`, at any frame.
pub fn enumerate_partial(frames: usize, u: usize) -> Result<Vec<AlignmentPath>> {
    if u == 0 {
        return Err(Error::InvalidArgument("partial alignments need at least one label".into()));
    }
    let paths: u128 = (0..frames).map(|b| binomial((b + u - 1) as u64, b as u64)).sum();
    if paths > PATH_LIMIT {
        return Err(Error::GuardExceeded { paths, limit: PATH_LIMIT });
    }
    let mut out = Vec::new();
    for blanks in 0..frames {
        for mut steps in interleavings(blanks, u - 1) {
            steps.push(Step::Emit);
            out.push(AlignmentPath { steps });
        }
    }
    Ok(out)
}

/// Sorted log-sum-exp, so the result does not depend on enumeration order.
fn sorted_log_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(|a, b| a.total_cmp(b));
    log_sum_exp(&terms)
}

/// `log P(y | x)` by summing every complete alignment.
pub fn exact_sequence_logp(lattice: &PosteriorLattice, y: &LabelSequence) -> Result<f64> {
    lattice.check_labels(y)?;
    let paths = enumerate(lattice.frames(), y.len())?;
    Ok(sorted_log_sum(paths.iter().map(|p| p.log_prob(lattice, y)).collect()))
}

/// `log P(y_1..y_u)`: total mass of partial alignments ending with the emission of `y_u`.
/// `u = 0` gives 0.
pub fn exact_prefix_logp(lattice: &PosteriorLattice, y: &LabelSequence, u: usize) -> Result<f64> {
    lattice.check_labels(y)?;
    if u > y.len() {
        return Err(Error::InvalidArgument(format!("prefix length {u} exceeds U={}", y.len())));
    }
    if u == 0 {
        return Ok(0.0);
    }
    let paths = enumerate_partial(lattice.frames(), u)?;
    Ok(sorted_log_sum(paths.iter().map(|p| p.log_prob(lattice, y)).collect()))
}

/// `P(y_u | y_<u)` for every `u` as ratios of enumerated prefix masses.
pub fn exact_conditionals(lattice: &PosteriorLattice, y: &LabelSequence) -> Result<Vec<f64>> {
    let mut previous = 0.0;
    let mut out = Vec::with_capacity(y.len());
    for u in 1..=y.len() {
        if previous == f64::NEG_INFINITY {
            return Err(Error::ZeroPrefix { u });
        }
        let current = exact_prefix_logp(lattice, y, u)?;
        out.push((current - previous).exp());
        previous = current;
    }
    Ok(out)
}

/// Central finite differences of `f` with respect to every lattice cell.
/// Cells holding negative infinity are left at zero.
pub fn finite_diff_grad<F>(f: F, lattice: &PosteriorLattice, step: f64) -> Result<GradientTable>
where
    F: Fn(&PosteriorLattice) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut grad = lattice.zeros_like();
    let mut probe = lattice.clone();
    for i in 0..lattice.values().len() {
        let original = lattice.values()[i];
        if !original.is_finite() {
            continue;
        }
        probe.values_mut()[i] = original + step;
        let plus = f(&probe)?;
        probe.values_mut()[i] = original - step;
        let minus = f(&probe)?;
        probe.values_mut()[i] = original;
        grad.values_mut()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Seeded random lattice with standard-normal logits scaled by `scale`.
pub fn random_lattice(frames: usize, labels: usize, vocab: Vocabulary, scale: f64, seed: u64) -> PosteriorLattice {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = frames * (labels + 1) * vocab.symbols();
    let logits: Vec<f64> = (0..n).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
    normalize_logits(frames, labels, vocab, logits).expect("finite logits")
}

/// Seeded random label sequence of the given length.
pub fn random_labels(labels: usize, vocab: Vocabulary, seed: u64) -> LabelSequence {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    LabelSequence::from_tokens_unchecked((0..labels).map(|_| rng.random_range(0..vocab.size())).collect())
}

/// A synthetic posterior model defined for every label prefix, so lattices can
/// be built for any output sequence. Rows depend only on `(seed, t, prefix)`.
/// At prefix length `max_labels` every token is a hard zero, which bounds the
/// output length and makes the distribution over outputs finite.
#[derive(Debug, Clone)]
pub struct FullLatticeModel {
    pub frames: usize,
    pub vocab: Vocabulary,
    pub max_labels: usize,
    pub scale: f64,
    pub seed: u64,
}

impl FullLatticeModel {
    fn row_seed(&self, t: usize, prefix: &[usize]) -> u64 {
        // FNV-1a over (seed, t, prefix).
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        mix(self.seed);
        mix(t as u64);
        mix(prefix.len() as u64);
        for &p in prefix {
            mix(p as u64);
        }
        h
    }

    /// Log-probability row for frame `t` after emitting `prefix`.
    pub fn row(&self, t: usize, prefix: &[usize]) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.row_seed(t, prefix));
        let mut logits: Vec<f64> =
            (0..self.vocab.symbols()).map(|_| self.scale * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        if prefix.len() >= self.max_labels {
            for v in &mut logits[..self.vocab.size()] {
                *v = f64::NEG_INFINITY;
            }
        }
        let norm = log_sum_exp(&logits);
        logits.iter().map(|v| v - norm).collect()
    }

    /// The lattice the model assigns to label sequence `y`.
    pub fn lattice_for(&self, y: &LabelSequence) -> Result<PosteriorLattice> {
        let mut values = Vec::with_capacity(self.frames * (y.len() + 1) * self.vocab.symbols());
        for t in 0..self.frames {
            for u in 0..=y.len() {
                values.extend(self.row(t, &y.tokens()[..u]));
            }
        }
        PosteriorLattice::from_log_probs(self.frames, y.len(), self.vocab, values)
    }

    /// Every output sequence of length `0..=max_labels`.
    pub fn all_outputs(&self) -> Vec<LabelSequence> {
        let mut out = vec![LabelSequence::default()];
        let mut frontier = vec![Vec::new()];
        for _ in 0..self.max_labels {
            let mut next = Vec::new();
            for prefix in &frontier {
                for k in 0..self.vocab.size() {
                    let mut y: Vec<usize> = prefix.clone();
                    y.push(k);
                    next.push(y);
                }
            }
            out.extend(next.iter().cloned().map(LabelSequence::from_tokens_unchecked));
            frontier = next;
        }
        out
    }

    /// Total probability of every output the model can produce, by enumeration.
    pub fn total_probability(&self) -> Result<f64> {
        let mut logs = Vec::new();
        for y in self.all_outputs() {
            let lattice = self.lattice_for(&y)?;
            logs.push(exact_sequence_logp(&lattice, &y)?);
        }
        Ok(sorted_log_sum(logs).exp())
    }
}
