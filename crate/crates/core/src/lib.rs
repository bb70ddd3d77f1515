//! Patient-trial matching: criteria augmentation under a privacy guard, a
//! dual-encoder matching model trained on a composite classification and
//! contrastive objective, and criteria- and trial-level evaluation.

pub mod augmentation;
pub mod cli;
pub mod data;
pub mod evaluation;
pub mod ingestion;
pub mod model;
pub mod objective;
pub mod seed;
pub mod training;
