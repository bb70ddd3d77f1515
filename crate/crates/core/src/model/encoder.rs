//! Text encoders: seeded feature hashing and precomputed external embeddings.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::read_jsonl;
use crate::seed::stable_hash;

/// Sparse vector as (index, value) pairs with distinct indices.
pub type SparseVec = Vec<(usize, f64)>;

pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;

    fn backend_id(&self) -> String;

    /// Whole-text embedding.
    fn encode_text(&self, text: &str) -> Result<Vec<f64>, ModelError>;

    /// One vector per token position.
    fn token_vectors(&self, text: &str) -> Result<Vec<SparseVec>, ModelError>;
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn merge(mut v: SparseVec) -> SparseVec {
    v.sort_unstable_by_key(|(i, _)| *i);
    let mut out: SparseVec = Vec::with_capacity(v.len());
    for (i, x) in v {
        match out.last_mut() {
            Some((j, y)) if *j == i => *y += x,
            _ => out.push((i, x)),
        }
    }
    out.retain(|(_, x)| *x != 0.0);
    out
}

pub struct HashingEncoder {
    dim: usize,
    buckets: usize,
    seed: u64,
}

impl HashingEncoder {
    pub fn new(dim: usize, buckets: usize, seed: u64) -> Self {
        Self {
            dim,
            buckets: buckets.max(1),
            seed,
        }
    }

    fn feature(&self, feature: &str) -> SparseVec {
        let scale = 1.0 / (self.buckets as f64).sqrt();
        merge(
            (0..self.buckets)
                .map(|b| {
                    let h = stable_hash(self.seed, &format!("{b}\u{1f}{feature}"));
                    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                    ((h % self.dim as u64) as usize, sign * scale)
                })
                .collect(),
        )
    }
}

impl TextEncoder for HashingEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn backend_id(&self) -> String {
        format!(
            "hashing_fallback/d{}/k{}/s{}",
            self.dim, self.buckets, self.seed
        )
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>, ModelError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(ModelError::EmptyText(text.to_string()));
        }
        let mut v = vec![0.0; self.dim];
        let bigrams = tokens.windows(2).map(|w| format!("{} {}", w[0], w[1]));
        for f in tokens.iter().cloned().chain(bigrams) {
            for (i, x) in self.feature(&f) {
                v[i] += x;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // every feature cancelled out; fall back to the first token alone
            for (i, x) in self.feature(&tokens[0]) {
                v[i] = x;
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            return Ok(v);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }

    fn token_vectors(&self, text: &str) -> Result<Vec<SparseVec>, ModelError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(ModelError::EmptyText(text.to_string()));
        }
        Ok(tokens.iter().map(|t| self.feature(t)).collect())
    }
}

/// One line of a precomputed-embedding file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrecomputedEmbedding {
    pub text: String,
    pub pooled: Vec<f64>,
    pub tokens: Vec<Vec<f64>>,
}

/// Embeddings produced offline by an external clinical encoder, keyed by
/// normalized text.
pub struct PretrainedEncoder {
    dim: usize,
    path: PathBuf,
    table: HashMap<String, PrecomputedEmbedding>,
}

impl PretrainedEncoder {
    pub fn load(path: &Path, dim: usize) -> Result<Self, ModelError> {
        let unavailable = |detail: String| ModelError::BackendUnavailable {
            backend: "pretrained_clinical".into(),
            detail,
        };
        if !path.exists() {
            return Err(unavailable(format!("{} does not exist", path.display())));
        }
        let rows: Vec<PrecomputedEmbedding> =
            read_jsonl(path).map_err(|e| unavailable(e.to_string()))?;
        let mut table = HashMap::with_capacity(rows.len());
        for r in rows {
            if r.pooled.len() != dim
                || r.tokens.iter().any(|t| t.len() != dim)
                || r.tokens.is_empty()
            {
                return Err(ModelError::DimMismatch {
                    expected: dim,
                    found: r.pooled.len(),
                    context: format!("precomputed embedding for `{}`", r.text),
                });
            }
            table.insert(crate::data::normalize_text(&r.text), r);
        }
        Ok(Self {
            dim,
            path: path.to_path_buf(),
            table,
        })
    }

    fn lookup(&self, text: &str) -> Result<&PrecomputedEmbedding, ModelError> {
        self.table
            .get(&crate::data::normalize_text(text))
            .ok_or_else(|| ModelError::BackendUnavailable {
                backend: "pretrained_clinical".into(),
                detail: format!(
                    "no precomputed embedding for `{text}` in {}",
                    self.path.display()
                ),
            })
    }
}

impl TextEncoder for PretrainedEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn backend_id(&self) -> String {
        format!("pretrained_clinical/d{}", self.dim)
    }

    fn encode_text(&self, text: &str) -> Result<Vec<f64>, ModelError> {
        Ok(self.lookup(text)?.pooled.clone())
    }

    fn token_vectors(&self, text: &str) -> Result<Vec<SparseVec>, ModelError> {
        Ok(self
            .lookup(text)?
            .tokens
            .iter()
            .map(|t| {
                t.iter()
                    .copied()
                    .enumerate()
                    .filter(|(_, x)| *x != 0.0)
                    .collect()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cosine_sim;

    #[test]
    fn hashing_is_deterministic_and_unit() {
        let enc = HashingEncoder::new(768, 4, 0);
        let a = enc.encode_text("History of epilepsy.").unwrap();
        assert_eq!(a, enc.encode_text("History of epilepsy.").unwrap());
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn disjoint_texts_are_nearly_orthogonal() {
        let enc = HashingEncoder::new(768, 4, 0);
        let a = enc.encode_text("Acute ischemic stroke patients.").unwrap();
        let b = enc
            .encode_text("Positive urine or serum pregnancy test.")
            .unwrap();
        assert!(cosine_sim(&a, &b).unwrap() < 0.1);
    }

    #[test]
    fn tokenizer_splits_on_punctuation() {
        assert_eq!(
            tokenize("Epilepsy [G40.909], adults"),
            ["epilepsy", "g40", "909", "adults"]
        );
        assert!(HashingEncoder::new(8, 2, 0).token_vectors("...").is_err());
    }

    #[test]
    fn missing_pretrained_file_names_backend() {
        let err = PretrainedEncoder::load(Path::new("/nonexistent/emb.jsonl"), 8)
            .err()
            .unwrap();
        assert!(err.to_string().contains("pretrained_clinical"), "{err}");
    }

    #[test]
    fn pretrained_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.jsonl");
        let row = PrecomputedEmbedding {
            text: "Known dementia.".into(),
            pooled: vec![0.0, 1.0],
            tokens: vec![vec![1.0, 0.0], vec![0.0, 2.0]],
        };
        crate::data::write_jsonl(&path, &[row]).unwrap();
        let enc = PretrainedEncoder::load(&path, 2).unwrap();
        assert_eq!(enc.encode_text("Known  dementia.").unwrap(), vec![0.0, 1.0]);
        assert_eq!(
            enc.token_vectors("Known dementia.").unwrap()[1],
            vec![(1, 2.0)]
        );
        assert!(enc.encode_text("other").is_err());
    }
}
