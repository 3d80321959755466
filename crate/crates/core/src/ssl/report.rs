//! Experiment reports: per-run records, seed-averaged summaries and text tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Provenance;
use crate::error::{Error, Result};
use crate::train::Weighting;

/// Loss weighting compared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Standard,
    UtteranceWeights,
    TokenWeights,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Standard, Mode::UtteranceWeights, Mode::TokenWeights];

    pub fn weighting(self, alpha: f64) -> Weighting {
        match self {
            Mode::Standard => Weighting::Standard,
            Mode::UtteranceWeights => Weighting::UtteranceWeights { alpha },
            Mode::TokenWeights => Weighting::TokenWeights { alpha },
        }
    }

    pub fn uses_alpha(self) -> bool {
        self != Mode::Standard
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Standard => "standard",
            Mode::UtteranceWeights => "utterance_weights",
            Mode::TokenWeights => "token_weights",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode {s:?}")))
    }
}

/// Which training condition a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    /// Standard training on the uncorrupted references.
    Clean,
    Corrupted { level: f64 },
    Round { round: usize },
}

impl Condition {
    pub fn label(&self) -> String {
        match self {
            Condition::Clean => "clean".into(),
            Condition::Corrupted { level } => format!("{:.0}%", level * 100.0),
            Condition::Round { round } => format!("round {round}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub alpha: f64,
    pub validation_wer: f64,
    pub test_wer: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_train_loss: Option<f64>,
}

/// One trained student: a seed replicate under one condition and mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub replicate: usize,
    pub condition: Condition,
    pub mode: Mode,
    /// Selected by validation WER; `None` for the standard mode.
    pub chosen_alpha: Option<f64>,
    pub validation_wer: f64,
    pub test_wer: f64,
    /// Mean per-token loss over the last training epoch of the chosen student.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_train_loss: Option<f64>,
    /// Every grid point tried, in ascending alpha order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<AlphaPoint>,
    /// Measured WER of the training references against the clean ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_wer: Option<f64>,
    /// Set when training diverged; both WER fields are then recorded as 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Seed-averaged result for one condition and mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub condition: Condition,
    pub mode: Mode,
    pub mean_test_wer: f64,
    pub test_wers: Vec<f64>,
    pub chosen_alphas: Vec<Option<f64>>,
    /// `(WER_corrupted_standard - WER_mode) / (WER_corrupted_standard - WER_clean)`
    /// on seed-averaged WERs; absent when the corrupted baseline does not degrade.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation_recovered: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Corruption,
    PseudoLabeling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub provenance: Provenance,
    pub experiment: ExperimentKind,
    pub replicates: usize,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

/// `(baseline - method) / (baseline - clean)`, defined only when the baseline degrades.
pub fn degradation_recovered(corrupted_baseline: f64, method: f64, clean: f64) -> Option<f64> {
    let gap = corrupted_baseline - clean;
    (gap > 0.0).then(|| (corrupted_baseline - method) / gap)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Groups runs by condition and mode, in first-appearance order, and averages over replicates.
pub fn summarize(runs: &[RunRecord]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for run in runs {
        match rows.iter_mut().find(|r| r.condition == run.condition && r.mode == run.mode) {
            Some(row) => {
                row.test_wers.push(run.test_wer);
                row.chosen_alphas.push(run.chosen_alpha);
            }
            None => rows.push(SummaryRow {
                condition: run.condition,
                mode: run.mode,
                mean_test_wer: 0.0,
                test_wers: vec![run.test_wer],
                chosen_alphas: vec![run.chosen_alpha],
                degradation_recovered: None,
            }),
        }
    }
    for row in &mut rows {
        row.mean_test_wer = mean(&row.test_wers);
    }
    let clean = rows.iter().find(|r| r.condition == Condition::Clean).map(|r| r.mean_test_wer);
    if let Some(clean) = clean {
        let baselines: Vec<(Condition, f64)> = rows
            .iter()
            .filter(|r| r.mode == Mode::Standard && matches!(r.condition, Condition::Corrupted { .. }))
            .map(|r| (r.condition, r.mean_test_wer))
            .collect();
        for row in &mut rows {
            if let Some(&(_, base)) = baselines.iter().find(|b| b.0 == row.condition) {
                row.degradation_recovered = degradation_recovered(base, row.mean_test_wer, clean);
            }
        }
    }
    rows
}

impl ExperimentReport {
    pub fn new(provenance: Provenance, experiment: ExperimentKind, replicates: usize, runs: Vec<RunRecord>) -> Self {
        let summary = summarize(&runs);
        Self { provenance, experiment, replicates, runs, summary }
    }

    pub fn row(&self, condition: Condition, mode: Mode) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.condition == condition && r.mode == mode)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Data(format!("report: {e}")))
    }

    /// Plain-text table: one line per condition, one WER column per mode,
    /// plus recovery columns for corruption runs.
    pub fn table(&self) -> String {
        let mut modes: Vec<Mode> = Vec::new();
        let mut conditions: Vec<Condition> = Vec::new();
        for r in &self.summary {
            if !modes.contains(&r.mode) {
                modes.push(r.mode);
            }
            if !conditions.contains(&r.condition) {
                conditions.push(r.condition);
            }
        }
        modes.sort();
        let corruption = self.experiment == ExperimentKind::Corruption;
        let mut out = String::new();
        let _ = write!(out, "{:<10}", "");
        for m in &modes {
            let _ = write!(out, " {:>18}", m.name());
        }
        if corruption {
            for m in modes.iter().filter(|m| m.uses_alpha()) {
                let _ = write!(out, " {:>22}", format!("recovered ({})", short(*m)));
            }
        }
        out.push('\n');
        for c in &conditions {
            let _ = write!(out, "{:<10}", c.label());
            for m in &modes {
                let cell = match self.row(*c, *m) {
                    Some(r) => format!("{:.2}{}", 100.0 * r.mean_test_wer, alpha_note(&r.chosen_alphas)),
                    None => "-".into(),
                };
                let _ = write!(out, " {cell:>18}");
            }
            if corruption {
                for m in modes.iter().filter(|m| m.uses_alpha()) {
                    let cell = match self.row(*c, *m).and_then(|r| r.degradation_recovered) {
                        Some(x) => format!("{:.2}%", 100.0 * x),
                        None => "-".into(),
                    };
                    let _ = write!(out, " {cell:>22}");
                }
            }
            out.push('\n');
        }
        let _ = writeln!(out, "WER in %, mean over {} replicate(s); chosen alpha per replicate in brackets.", self.replicates);
        out
    }
}

fn short(m: Mode) -> &'static str {
    match m {
        Mode::Standard => "std",
        Mode::UtteranceWeights => "utt",
        Mode::TokenWeights => "tok",
    }
}

fn alpha_note(alphas: &[Option<f64>]) -> String {
    let a: Vec<String> = alphas.iter().flatten().map(|a| format!("{a}")).collect();
    if a.is_empty() {
        String::new()
    } else {
        format!(" [{}]", a.join(","))
    }
}
