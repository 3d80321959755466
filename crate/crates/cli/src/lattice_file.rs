//! Lattice files for `loss-check`.
//!
//! ```text
//! { "t": 3, "u": 2, "v": 3,
//!   "logp": [ ...t * (u+1) * (v+1) values, row-major over (t, u, k)... ],
//!   "tokens": [0, 2],          // optional, length u
//!   "lambda": [1.0, 0.5] }     // optional, length u
//! ```
//!
//! `v` counts real tokens; the blank is index `v`, the last entry of every
//! row. Entry `(t, u, k)` sits at `(t * (u_max + 1) + u) * (v + 1) + k`.
//! `null` encodes a log-probability of minus infinity. Rows must be normalized.

use std::path::Path;

use serde::{Deserialize, Serialize};
use twrnnt::{Error, PosteriorLattice, Result, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeFile {
    pub t: usize,
    pub u: usize,
    pub v: usize,
    pub logp: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
}

impl LatticeFile {
    pub fn read_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn lattice(&self) -> Result<PosteriorLattice> {
        let vocab = Vocabulary::new(self.v)?;
        let expected = self.t * (self.u + 1) * (self.v + 1);
        if self.logp.len() != expected {
            return Err(Error::Shape(format!(
                "logp has {} entries, expected t * (u + 1) * (v + 1) = {expected}",
                self.logp.len()
            )));
        }
        let flat = self.logp.iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect();
        PosteriorLattice::from_log_probs(self.t, self.u, vocab, flat)
    }

    #[cfg(test)]
    pub fn from_lattice(lattice: &PosteriorLattice, tokens: Option<Vec<usize>>, lambda: Option<Vec<f64>>) -> Self {
        let (t, u, v) = (lattice.frames(), lattice.labels(), lattice.vocab().size());
        let logp = (0..t)
            .flat_map(|ti| (0..=u).map(move |ui| (ti, ui)))
            .flat_map(|(ti, ui)| lattice.row(ti, ui).iter().map(|&x| (x != f64::NEG_INFINITY).then_some(x)).collect::<Vec<_>>())
            .collect();
        Self { t, u, v, logp, tokens, lambda }
    }
}
