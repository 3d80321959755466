//! A small trainable transducer with hand-derived gradients.
//!
//! * encoder: `enc_t = tanh(W_e x_t + b_e)`
//! * predictor: `pred_u = tanh(W_p E[in_u] + b_p)`, where `in_0` is the
//!   begin-of-sequence row `E[|V|]` and `in_u = y_u` afterwards
//! * joiner: `logits_{t,u} = W_o tanh(enc_t + pred_u) + b_o`, one logit per
//!   token plus blank
//!
//! There is no recurrence, so every lattice row is a closed-form function of the
//! parameters and the backward pass is a direct application of the chain rule.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{log_sum_exp, GradientTable, LabelSequence, PosteriorLattice, Vocabulary};
use crate::rng::SeedTree;

/// Numeric precision of training forward passes. Loss math is always 64-bit;
/// `F32` rounds every activation and logit through `f32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden: usize,
    pub vocab_size: usize,
}

/// Offsets of the named parameter slices inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub enc_w: usize,
    pub enc_b: usize,
    pub embed: usize,
    pub pred_w: usize,
    pub pred_b: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub total: usize,
}

impl ModelDims {
    pub fn symbols(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn layout(&self) -> ParamLayout {
        let (d, h, s) = (self.input_dim, self.hidden, self.symbols());
        let enc_w = 0;
        let enc_b = enc_w + h * d;
        let embed = enc_b + h;
        let pred_w = embed + s * h;
        let pred_b = pred_w + h * h;
        let out_w = pred_b + h;
        let out_b = out_w + s * h;
        ParamLayout { enc_w, enc_b, embed, pred_w, pred_b, out_w, out_b, total: out_b + s }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.vocab_size == 0 {
            return Err(Error::InvalidArgument(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransducerModel {
    pub dims: ModelDims,
    pub params: Vec<f64>,
    #[serde(default)]
    pub precision: Precision,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    frames: usize,
    labels: usize,
    enc: Vec<f64>,
    pred: Vec<f64>,
    pred_inputs: Vec<usize>,
    joint: Vec<f64>,
}

impl TransducerModel {
    /// Scaled-normal weights (`1/sqrt(fan_in)`), zero biases.
    pub fn init(dims: ModelDims, seed: SeedTree) -> Result<Self> {
        dims.validate()?;
        let layout = dims.layout();
        let mut params = vec![0.0; layout.total];
        let mut rng = seed.rng();
        let (d, h) = (dims.input_dim, dims.hidden);
        let mut fill = |range: std::ops::Range<usize>, scale: f64, rng: &mut rand_chacha::ChaCha8Rng| {
            for p in &mut params[range] {
                let z: f64 = StandardNormal.sample(rng);
                *p = scale * z;
            }
        };
        fill(layout.enc_w..layout.enc_b, 1.0 / (d as f64).sqrt(), &mut rng);
        fill(layout.embed..layout.pred_w, 1.0, &mut rng);
        fill(layout.pred_w..layout.pred_b, 1.0 / (h as f64).sqrt(), &mut rng);
        fill(layout.out_w..layout.out_b, 1.0 / (h as f64).sqrt(), &mut rng);
        Ok(Self { dims, params, precision: Precision::F64 })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        Ok(Self { dims, params: vec![0.0; dims.param_count()], precision: Precision::F64 })
    }

    pub fn vocab(&self) -> Vocabulary {
        Vocabulary::new(self.dims.vocab_size).expect("validated dims")
    }

    #[inline]
    fn round(&self, x: f64) -> f64 {
        match self.precision {
            Precision::F64 => x,
            Precision::F32 => x as f32 as f64,
        }
    }

    fn check_features(&self, features: &[Vec<f64>]) -> Result<()> {
        if features.is_empty() {
            return Err(Error::Shape("utterance has no frames".into()));
        }
        if let Some((t, row)) = features.iter().enumerate().find(|(_, r)| r.len() != self.dims.input_dim) {
            return Err(Error::Shape(format!(
                "frame {t} has {} features, model expects {}",
                row.len(),
                self.dims.input_dim
            )));
        }
        Ok(())
    }

    /// Encoder states, `T x H`.
    pub fn encode(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_features(features)?;
        let l = self.dims.layout();
        let (d, h) = (self.dims.input_dim, self.dims.hidden);
        let mut enc = vec![0.0; features.len() * h];
        for (t, x) in features.iter().enumerate() {
            for j in 0..h {
                let w = &self.params[l.enc_w + j * d..l.enc_w + (j + 1) * d];
                let pre = self.params[l.enc_b + j] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                enc[t * h + j] = self.round(pre.tanh());
            }
        }
        Ok(enc)
    }

    /// Predictor state for input symbol `input` (a token, or `|V|` for begin-of-sequence).
    pub fn predict(&self, input: usize) -> Vec<f64> {
        let l = self.dims.layout();
        let h = self.dims.hidden;
        let emb = &self.params[l.embed + input * h..l.embed + (input + 1) * h];
        (0..h)
            .map(|j| {
                let w = &self.params[l.pred_w + j * h..l.pred_w + (j + 1) * h];
                let pre = self.params[l.pred_b + j] + w.iter().zip(emb).map(|(a, b)| a * b).sum::<f64>();
                self.round(pre.tanh())
            })
            .collect()
    }

    /// Joiner output: the hidden joint state and the log-softmax row.
    fn join(&self, enc: &[f64], pred: &[f64], joint: &mut [f64], logp: &mut [f64]) {
        let l = self.dims.layout();
        let h = self.dims.hidden;
        for j in 0..h {
            joint[j] = self.round((enc[j] + pred[j]).tanh());
        }
        for (k, out) in logp.iter_mut().enumerate() {
            let w = &self.params[l.out_w + k * h..l.out_w + (k + 1) * h];
            *out = self.round(self.params[l.out_b + k] + w.iter().zip(joint.iter()).map(|(a, b)| a * b).sum::<f64>());
        }
        let norm = log_sum_exp(logp);
        logp.iter_mut().for_each(|v| *v -= norm);
    }

    /// Log-softmax row for frame state `enc` and predictor state `pred`.
    pub fn step_log_probs(&self, enc: &[f64], pred: &[f64]) -> Vec<f64> {
        let mut joint = vec![0.0; self.dims.hidden];
        let mut logp = vec![0.0; self.dims.symbols()];
        self.join(enc, pred, &mut joint, &mut logp);
        logp
    }

    /// Full posterior lattice for `features` and target `tokens`, plus the
    /// activations needed by [`TransducerModel::backward_with_cache`].
    pub fn forward_with_cache(
        &self,
        features: &[Vec<f64>],
        tokens: &LabelSequence,
    ) -> Result<(PosteriorLattice, ForwardCache)> {
        let vocab = self.vocab();
        if let Some(&token) = tokens.tokens().iter().find(|&&t| !vocab.contains(t)) {
            return Err(Error::TokenOutOfRange { token, vocab: vocab.size() });
        }
        let enc = self.encode(features)?;
        let (frames, labels) = (features.len(), tokens.len());
        let (h, s) = (self.dims.hidden, self.dims.symbols());
        let pred_inputs: Vec<usize> =
            std::iter::once(self.dims.vocab_size).chain(tokens.tokens().iter().copied()).collect();
        let mut pred = Vec::with_capacity((labels + 1) * h);
        for &input in &pred_inputs {
            pred.extend(self.predict(input));
        }
        let mut joint = vec![0.0; frames * (labels + 1) * h];
        let mut logp = vec![0.0; frames * (labels + 1) * s];
        for t in 0..frames {
            for u in 0..=labels {
                let cell = t * (labels + 1) + u;
                self.join(
                    &enc[t * h..(t + 1) * h],
                    &pred[u * h..(u + 1) * h],
                    &mut joint[cell * h..(cell + 1) * h],
                    &mut logp[cell * s..(cell + 1) * s],
                );
            }
        }
        let lattice = PosteriorLattice::from_log_probs_unnormalized(frames, labels, vocab, logp)?;
        Ok((lattice, ForwardCache { frames, labels, enc, pred, pred_inputs, joint }))
    }

    pub fn forward(&self, features: &[Vec<f64>], tokens: &LabelSequence) -> Result<PosteriorLattice> {
        Ok(self.forward_with_cache(features, tokens)?.0)
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d logp` on the lattice.
    pub fn backward_with_cache(
        &self,
        features: &[Vec<f64>],
        lattice: &PosteriorLattice,
        cache: &ForwardCache,
        dlogp: &GradientTable,
        grad: &mut [f64],
    ) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::Shape(format!("gradient buffer has {} entries, model has {}", grad.len(), self.params.len())));
        }
        if dlogp.frames() != cache.frames || dlogp.labels() != cache.labels || dlogp.vocab() != lattice.vocab() {
            return Err(Error::Shape(format!(
                "lattice gradient is (T={}, U={}), forward pass was (T={}, U={})",
                dlogp.frames(),
                dlogp.labels(),
                cache.frames,
                cache.labels
            )));
        }
        let l = self.dims.layout();
        let (d, h, s) = (self.dims.input_dim, self.dims.hidden, self.dims.symbols());
        let (frames, labels) = (cache.frames, cache.labels);
        let mut d_enc = vec![0.0; frames * h];
        let mut d_pred = vec![0.0; (labels + 1) * h];
        let mut d_logit = vec![0.0; s];
        let mut d_joint = vec![0.0; h];
        for t in 0..frames {
            for u in 0..=labels {
                let cell = t * (labels + 1) + u;
                let g = &dlogp.values()[cell * s..(cell + 1) * s];
                let total: f64 = g.iter().sum();
                if g.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let row = lattice.row(t, u);
                for k in 0..s {
                    d_logit[k] = g[k] - row[k].exp() * total;
                }
                let z = &cache.joint[cell * h..(cell + 1) * h];
                d_joint.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..s {
                    let dk = d_logit[k];
                    grad[l.out_b + k] += dk;
                    let w = &self.params[l.out_w + k * h..l.out_w + (k + 1) * h];
                    let gw = &mut grad[l.out_w + k * h..l.out_w + (k + 1) * h];
                    for j in 0..h {
                        gw[j] += dk * z[j];
                        d_joint[j] += dk * w[j];
                    }
                }
                for j in 0..h {
                    let dpre = d_joint[j] * (1.0 - z[j] * z[j]);
                    d_enc[t * h + j] += dpre;
                    d_pred[u * h + j] += dpre;
                }
            }
        }
        for (t, x) in features.iter().enumerate() {
            for j in 0..h {
                let e = cache.enc[t * h + j];
                let dpre = d_enc[t * h + j] * (1.0 - e * e);
                if dpre == 0.0 {
                    continue;
                }
                grad[l.enc_b + j] += dpre;
                let gw = &mut grad[l.enc_w + j * d..l.enc_w + (j + 1) * d];
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g += dpre * xi;
                }
            }
        }
        for (u, &input) in cache.pred_inputs.iter().enumerate() {
            let emb_start = l.embed + input * h;
            for j in 0..h {
                let p = cache.pred[u * h + j];
                let dpre = d_pred[u * h + j] * (1.0 - p * p);
                if dpre == 0.0 {
                    continue;
                }
                grad[l.pred_b + j] += dpre;
                for i in 0..h {
                    grad[l.pred_w + j * h + i] += dpre * self.params[emb_start + i];
                    grad[emb_start + i] += dpre * self.params[l.pred_w + j * h + i];
                }
            }
        }
        Ok(())
    }

    /// Parameter gradient of any scalar loss whose lattice gradient is `dlogp`.
    pub fn backward(&self, features: &[Vec<f64>], tokens: &LabelSequence, dlogp: &GradientTable) -> Result<Vec<f64>> {
        let (lattice, cache) = self.forward_with_cache(features, tokens)?;
        let mut grad = vec![0.0; self.params.len()];
        self.backward_with_cache(features, &lattice, &cache, dlogp, &mut grad)?;
        Ok(grad)
    }
}

fn check_gradient(grad: &[f64]) -> Result<()> {
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    Ok(())
}

/// `params -= lr * grad`. Rejects non-finite gradients before touching the parameters.
pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
    }
    if params.len() != grad.len() {
        return Err(Error::Shape("parameter and gradient lengths differ".into()));
    }
    check_gradient(grad)?;
    params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], state: &mut AdamState, grad: &[f64], hyper: &AdamHyper) -> Result<()> {
    if !(hyper.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", hyper.lr)));
    }
    if params.len() != grad.len() || state.m.len() != grad.len() {
        return Err(Error::Shape("parameter, gradient and optimizer lengths differ".into()));
    }
    check_gradient(grad)?;
    state.step += 1;
    let bc1 = 1.0 - hyper.beta1.powi(state.step as i32);
    let bc2 = 1.0 - hyper.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * grad[i];
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

/// Anything that can score the next output symbol given a frame and a hypothesis prefix.
pub trait StepScorer {
    fn frames(&self) -> usize;
    fn vocab(&self) -> Vocabulary;
    /// Log-probabilities over tokens and blank at frame `t` after emitting `prefix`.
    /// `None` when the scorer has no row for this prefix.
    fn step(&mut self, t: usize, prefix: &[usize]) -> Option<Vec<f64>>;
}

/// Treats a lattice as the decoder's posterior: the row at `(t, u)` is used for any
/// prefix of length `u`.
impl StepScorer for &PosteriorLattice {
    fn frames(&self) -> usize {
        PosteriorLattice::frames(self)
    }

    fn vocab(&self) -> Vocabulary {
        PosteriorLattice::vocab(self)
    }

    fn step(&mut self, t: usize, prefix: &[usize]) -> Option<Vec<f64>> {
        (prefix.len() <= self.labels()).then(|| self.row(t, prefix.len()).to_vec())
    }
}

/// A model bound to one utterance's encoder states.
pub struct ModelScorer<'a> {
    model: &'a TransducerModel,
    enc: Vec<f64>,
    frames: usize,
    last_input: usize,
    pred: Vec<f64>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a TransducerModel, features: &[Vec<f64>]) -> Result<Self> {
        let enc = model.encode(features)?;
        let bos = model.dims.vocab_size;
        Ok(Self { model, enc, frames: features.len(), last_input: bos, pred: model.predict(bos) })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn frames(&self) -> usize {
        self.frames
    }

    fn vocab(&self) -> Vocabulary {
        self.model.vocab()
    }

    fn step(&mut self, t: usize, prefix: &[usize]) -> Option<Vec<f64>> {
        let input = prefix.last().copied().unwrap_or(self.model.dims.vocab_size);
        if input != self.last_input {
            self.pred = self.model.predict(input);
            self.last_input = input;
        }
        let h = self.model.dims.hidden;
        Some(self.model.step_log_probs(&self.enc[t * h..(t + 1) * h], &self.pred))
    }
}

/// Greedy transducer decoding. At every frame the most likely symbol is taken;
/// tokens are emitted until blank wins or `max_symbols_per_frame` tokens have
/// been emitted on this frame. Returns the hypothesis and whether decoding
/// reached the last frame without the scorer running out of rows.
pub fn greedy_decode<S: StepScorer>(mut scorer: S, max_symbols_per_frame: usize) -> (LabelSequence, bool) {
    let blank = scorer.vocab().blank();
    let mut hyp = Vec::new();
    for t in 0..scorer.frames() {
        let mut emitted = 0;
        loop {
            let Some(row) = scorer.step(t, &hyp) else {
                return (LabelSequence::from_tokens_unchecked(hyp), false);
            };
            let best = argmax(&row);
            if best == blank || emitted >= max_symbols_per_frame {
                break;
            }
            hyp.push(best);
            emitted += 1;
        }
    }
    (LabelSequence::from_tokens_unchecked(hyp), true)
}

/// Index of the largest entry; the earliest wins ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Decodes with a model, using the default cap of 4 symbols per frame.
pub fn decode(model: &TransducerModel, features: &[Vec<f64>]) -> Result<LabelSequence> {
    Ok(greedy_decode(ModelScorer::new(model, features)?, DEFAULT_MAX_SYMBOLS_PER_FRAME).0)
}

pub const DEFAULT_MAX_SYMBOLS_PER_FRAME: usize = 4;

/// Seeded random features for tests and gradient checks.
pub fn random_features(frames: usize, dim: usize, seed: SeedTree) -> Vec<Vec<f64>> {
    let mut rng = seed.rng();
    (0..frames).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}
