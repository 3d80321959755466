//! Model checkpoints.
//!
//! A checkpoint is one JSON object:
//!
//! ```text
//! {
//!   "format": "twrnnt-checkpoint",
//!   "version": 1,
//!   "provenance": { ... },
//!   "model": { "dims": {"input_dim": D, "hidden": H, "vocab_size": V},
//!              "params": [ ... ], "precision": "f64" },
//!   "optimizer": { "step": n, "m": [ ... ], "v": [ ... ] },   // optional
//!   "epoch_losses": [ ... ]
//! }
//! ```
//!
//! `params` is the flat parameter vector in the order encoder weights, encoder
//! bias, embedding table, predictor weights, predictor bias, output weights,
//! output bias. Weight matrices are row-major with one row per output unit;
//! the embedding table has one row per token plus a final begin-of-sequence row.
//! Floats are written with enough digits to round-trip exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Provenance;
use crate::error::{Error, Result};
use crate::model::{AdamState, TransducerModel};

pub const CHECKPOINT_FORMAT: &str = "twrnnt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub provenance: Provenance,
    pub model: TransducerModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
    #[serde(default)]
    pub epoch_losses: Vec<f64>,
}

impl Checkpoint {
    pub fn new(provenance: Provenance, model: TransducerModel, optimizer: Option<AdamState>, epoch_losses: Vec<f64>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            provenance,
            model,
            optimizer,
            epoch_losses,
        }
    }

    /// Parses and checks format, version and parameter count.
    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| Error::Data(format!("checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        let expected = ck.model.dims.param_count();
        if ck.model.params.len() != expected {
            return Err(Error::Data(format!("checkpoint has {} parameters, dims imply {expected}", ck.model.params.len())));
        }
        if let Some(opt) = &ck.optimizer {
            if opt.m.len() != expected || opt.v.len() != expected {
                return Err(Error::Data("optimizer state does not match the parameter count".into()));
            }
        }
        Ok(ck)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn write_path(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::rng::SeedTree;

    #[test]
    fn round_trips_exactly() {
        let dims = ModelDims { input_dim: 3, hidden: 4, vocab_size: 5 };
        let model = TransducerModel::init(dims, SeedTree::new(9)).unwrap();
        let opt = AdamState::new(model.params.len());
        let ck = Checkpoint::new(Provenance::new("train", 9, &dims), model, Some(opt), vec![1.5, 0.25]);
        assert_eq!(Checkpoint::from_json(&ck.to_json().unwrap()).unwrap(), ck);
    }

    #[test]
    fn wrong_parameter_count_rejected() {
        let dims = ModelDims { input_dim: 3, hidden: 4, vocab_size: 5 };
        let mut model = TransducerModel::zeros(dims).unwrap();
        model.params.pop();
        let ck = Checkpoint::new(Provenance::new("train", 0, &dims), model, None, vec![]);
        assert!(matches!(Checkpoint::from_json(&ck.to_json().unwrap()), Err(Error::Data(_))));
    }
}
