//! Semi-supervised experiments: corruption, pseudo-labeling and scoring.

pub mod corrupt;
pub mod experiment;
pub mod report;
pub mod wer;
