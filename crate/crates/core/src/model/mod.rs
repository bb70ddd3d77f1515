//! Dual encoder: a memory network over patient entries and a convolutional
//! highway encoder over criterion tokens, joined by a three-way head.

pub mod checkpoint;
pub mod encoder;
pub mod network;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use encoder::{tokenize, HashingEncoder, PretrainedEncoder, SparseVec, TextEncoder};
pub use network::{CriterionCache, Layout, MatchModel, PairEmbedding, ReadoutCache};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("text `{0}` has no tokens")]
    EmptyText(String),
    #[error("patient {0} has no entries")]
    EmptyPatient(String),
    #[error("text encoder backend `{backend}` unavailable: {detail}")]
    BackendUnavailable { backend: String, detail: String },
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimMismatch {
        expected: usize,
        found: usize,
        context: String,
    },
    #[error("undefined similarity: zero vector")]
    UndefinedSimilarity,
    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TextEncoderKind {
    PretrainedClinical,
    #[default]
    HashingFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MemoryReadout {
    #[default]
    QueryAttention,
    SelfAttentionPool,
    MeanPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub embedding_dim: usize,
    pub highway_channels: usize,
    pub highway_layers: usize,
    pub text_encoder: TextEncoderKind,
    pub memory_readout: MemoryReadout,
    /// Use `T(h)*H(h) + H(h)*(1 - sigmoid(H(h)))` with a linear `H` instead
    /// of the carry form.
    pub literal_highway_formula: bool,
    pub hashing_buckets: usize,
    pub hashing_seed: u64,
    pub pretrained_path: Option<PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 768,
            highway_channels: 128,
            highway_layers: 2,
            text_encoder: TextEncoderKind::HashingFallback,
            memory_readout: MemoryReadout::QueryAttention,
            literal_highway_formula: false,
            hashing_buckets: 4,
            hashing_seed: 0,
            pretrained_path: None,
        }
    }
}

impl EncoderConfig {
    pub fn build_encoder(&self) -> Result<Box<dyn TextEncoder>, ModelError> {
        match self.text_encoder {
            TextEncoderKind::HashingFallback => Ok(Box::new(HashingEncoder::new(
                self.embedding_dim,
                self.hashing_buckets,
                self.hashing_seed,
            ))),
            TextEncoderKind::PretrainedClinical => {
                let path = self.pretrained_path.as_ref().ok_or_else(|| {
                    ModelError::BackendUnavailable {
                        backend: "pretrained_clinical".into(),
                        detail: "no pretrained_path configured".into(),
                    }
                })?;
                Ok(Box::new(PretrainedEncoder::load(path, self.embedding_dim)?))
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64, ModelError> {
    if a.len() != b.len() {
        return Err(ModelError::DimMismatch {
            expected: a.len(),
            found: b.len(),
            context: "cosine similarity".into(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(ModelError::UndefinedSimilarity);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}
