//! Utterance datasets: JSON-lines files and the synthetic generator.
//!
//! A dataset file starts with one header line
//!
//! ```text
//! {"header":{"provenance":{...},"vocab_size":8,"input_dim":8,"prototypes":[[...],...]}}
//! ```
//!
//! followed by one utterance per line:
//!
//! ```text
//! {"id":"train-00000","features":[[...],...],"tokens":[3,1,4]}
//! ```
//!
//! with optional `"confidences"`, `"final_blank_logp"` and `"lambda"` fields.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LabelSequence, Vocabulary};
use crate::rng::{fnv1a, SeedTree};

/// Version of every file schema written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// Where an artifact came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub schema_version: u32,
    pub code_version: String,
    pub command: String,
    pub seed: u64,
    /// FNV-1a of the canonical JSON of the producing configuration, hex encoded.
    pub config_hash: String,
}

impl Provenance {
    pub fn new<C: Serialize>(command: &str, seed: u64, config: &C) -> Self {
        let canonical = serde_json::to_string(config).unwrap_or_default();
        Self {
            schema_version: SCHEMA_VERSION,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config_hash: format!("{:016x}", fnv1a(canonical.as_bytes())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub provenance: Provenance,
    pub vocab_size: usize,
    pub input_dim: usize,
    /// One prototype feature vector per token; defines token similarity.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prototypes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub features: Vec<Vec<f64>>,
    pub tokens: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidences: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_blank_logp: Option<f64>,
    #[serde(default, rename = "lambda", skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
}

impl Utterance {
    pub fn new(id: impl Into<String>, features: Vec<Vec<f64>>, tokens: Vec<usize>) -> Self {
        Self { id: id.into(), features, tokens, confidences: None, final_blank_logp: None, lambda: None }
    }

    pub fn labels(&self) -> LabelSequence {
        LabelSequence::from_tokens_unchecked(self.tokens.clone())
    }

    pub fn frames(&self) -> usize {
        self.features.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub utterances: Vec<Utterance>,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: DatasetHeader,
}

impl Dataset {
    pub fn vocab(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.header.vocab_size)
    }

    /// Checks shapes and token ranges of every utterance.
    pub fn validate(&self) -> Result<()> {
        let vocab = self.vocab()?;
        for utt in &self.utterances {
            if utt.features.is_empty() {
                return Err(Error::Data(format!("utterance {} has no frames", utt.id)));
            }
            if utt.features.iter().any(|f| f.len() != self.header.input_dim) {
                return Err(Error::Data(format!("utterance {} has frames of the wrong width", utt.id)));
            }
            if utt.features.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("utterance {} has non-finite features", utt.id)));
            }
            if let Some(&token) = utt.tokens.iter().find(|&&t| !vocab.contains(t)) {
                return Err(Error::Data(format!("utterance {} has token {token} outside the vocabulary", utt.id)));
            }
            if let Some(c) = &utt.confidences {
                if c.len() != utt.tokens.len() {
                    return Err(Error::Data(format!("utterance {}: confidences misaligned with tokens", utt.id)));
                }
            }
            if let Some(l) = &utt.lambda {
                if l.len() != utt.tokens.len() {
                    return Err(Error::Data(format!("utterance {}: lambda misaligned with tokens", utt.id)));
                }
            }
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Data(e.to_string());
        let line = serde_json::to_string(&HeaderLine { header: self.header.clone() }).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(out, "{line}").map_err(io)?;
        for utt in &self.utterances {
            let line = serde_json::to_string(utt).map_err(|e| Error::Data(e.to_string()))?;
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut header = None;
        let mut utterances = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Data(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                let h: HeaderLine = serde_json::from_str(&line)
                    .map_err(|e| Error::Data(format!("line {}: expected dataset header: {e}", n + 1)))?;
                header = Some(h.header);
                continue;
            }
            let utt: Utterance =
                serde_json::from_str(&line).map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?;
            utterances.push(utt);
        }
        let header = header.ok_or_else(|| Error::Data("empty dataset file".into()))?;
        let dataset = Dataset { header, utterances };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn read_path(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }

    pub fn write_path(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }

    pub fn token_count(&self) -> usize {
        self.utterances.iter().map(|u| u.tokens.len()).sum()
    }
}

/// Parameters of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub vocab_size: usize,
    pub input_dim: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    /// Standard deviation of the Gaussian feature noise.
    pub noise: f64,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub n_pretrain: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            vocab_size: 8,
            input_dim: 8,
            min_tokens: 3,
            max_tokens: 8,
            min_frames_per_token: 1,
            max_frames_per_token: 3,
            noise: 0.6,
            n_train: 500,
            n_validation: 100,
            n_test: 200,
            n_pretrain: 200,
            seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.vocab_size < 2 {
            return bad("vocab_size must be >= 2");
        }
        if self.input_dim == 0 {
            return bad("input_dim must be >= 1");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("token length range must satisfy 1 <= min_tokens <= max_tokens");
        }
        if self.min_frames_per_token == 0 || self.min_frames_per_token > self.max_frames_per_token {
            return bad("frames-per-token range must satisfy 1 <= min <= max");
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad("noise must be finite and >= 0");
        }
        Ok(())
    }
}

/// The four disjoint splits of a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub pretrain: Dataset,
}

impl SyntheticSplits {
    pub fn named(&self) -> [(&'static str, &Dataset); 4] {
        [("train", &self.train), ("validation", &self.validation), ("test", &self.test), ("pretrain", &self.pretrain)]
    }
}

/// Token prototypes drawn from a standard normal, one per token.
pub fn prototypes(cfg: &SyntheticConfig) -> Vec<Vec<f64>> {
    let mut rng = SeedTree::new(cfg.seed).child("prototypes").rng();
    (0..cfg.vocab_size)
        .map(|_| (0..cfg.input_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

/// One utterance: a random token sequence without immediate repeats; each token
/// spans a random number of frames whose features are its prototype plus noise.
fn synth_utterance(cfg: &SyntheticConfig, protos: &[Vec<f64>], id: String, seed: SeedTree) -> Utterance {
    let mut rng = seed.rng();
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("valid noise");
    let len = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
    let mut tokens: Vec<usize> = Vec::with_capacity(len);
    while tokens.len() < len {
        let k = rng.random_range(0..cfg.vocab_size);
        if tokens.last() != Some(&k) {
            tokens.push(k);
        }
    }
    let mut features = Vec::new();
    for &k in &tokens {
        let span = rng.random_range(cfg.min_frames_per_token..=cfg.max_frames_per_token);
        for _ in 0..span {
            features.push(
                protos[k]
                    .iter()
                    .map(|&p| if cfg.noise > 0.0 { p + noise.sample(&mut rng) } else { p })
                    .collect(),
            );
        }
    }
    Utterance::new(id, features, tokens)
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticSplits> {
    cfg.validate()?;
    let protos = prototypes(cfg);
    let root = SeedTree::new(cfg.seed);
    let header = DatasetHeader {
        provenance: Provenance::new("gen-data", cfg.seed, cfg),
        vocab_size: cfg.vocab_size,
        input_dim: cfg.input_dim,
        prototypes: protos.clone(),
    };
    let split = |name: &str, n: usize| Dataset {
        header: header.clone(),
        utterances: (0..n)
            .map(|i| synth_utterance(cfg, &protos, format!("{name}-{i:05}"), root.child(name).child(&i.to_string())))
            .collect(),
    };
    Ok(SyntheticSplits {
        train: split("train", cfg.n_train),
        validation: split("validation", cfg.n_validation),
        test: split("test", cfg.n_test),
        pretrain: split("pretrain", cfg.n_pretrain),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig { n_train: 5, n_validation: 2, n_test: 3, n_pretrain: 4, ..SyntheticConfig::default() }
    }

    #[test]
    fn split_sizes_and_ids() {
        let s = generate_synthetic(&small()).unwrap();
        assert_eq!(s.train.utterances.len(), 5);
        assert_eq!(s.validation.utterances.len(), 2);
        assert_eq!(s.test.utterances.len(), 3);
        assert_eq!(s.pretrain.utterances.len(), 4);
        let mut ids: Vec<&str> = s.named().iter().flat_map(|(_, d)| d.utterances.iter().map(|u| u.id.as_str())).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 14);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.train.write_jsonl(&mut x).unwrap();
        b.train.write_jsonl(&mut y).unwrap();
        assert_eq!(x, y);
        let read = Dataset::read_jsonl(&x[..]).unwrap();
        assert_eq!(read, a.train);
    }

    #[test]
    fn utterances_have_no_immediate_repeats_and_enough_frames() {
        let s = generate_synthetic(&SyntheticConfig { n_train: 50, ..small() }).unwrap();
        for u in &s.train.utterances {
            assert!(u.tokens.windows(2).all(|w| w[0] != w[1]));
            assert!(u.frames() >= u.tokens.len() && u.frames() <= 3 * u.tokens.len());
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(generate_synthetic(&SyntheticConfig { min_tokens: 5, max_tokens: 2, ..small() }).is_err());
        assert!(generate_synthetic(&SyntheticConfig { min_frames_per_token: 0, ..small() }).is_err());
        assert!(generate_synthetic(&SyntheticConfig { noise: -1.0, ..small() }).is_err());
    }

    #[test]
    fn header_is_required() {
        assert!(Dataset::read_jsonl(&b"{\"id\":\"x\",\"features\":[[0.0]],\"tokens\":[]}\n"[..]).is_err());
    }
}
