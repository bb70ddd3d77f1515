//! Single-file checkpoints: magic, length-prefixed JSON header, raw f64 LE
//! parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, MatchModel, ModelError};

const MAGIC: &[u8; 8] = b"TMCKPT01";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    backend: String,
    n_params: usize,
}

pub fn save_checkpoint(path: &Path, model: &MatchModel, backend: &str) -> Result<(), ModelError> {
    let err = |detail: String| ModelError::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        backend: backend.to_string(),
        n_params: model.params.len(),
    })
    .map_err(|e| err(e.to_string()))?;
    let file = File::create(path).map_err(|e| err(e.to_string()))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| err(e.to_string()));
    write(MAGIC)?;
    write(&(header.len() as u64).to_le_bytes())?;
    write(&header)?;
    for p in &model.params {
        write(&p.to_le_bytes())?;
    }
    w.flush().map_err(|e| err(e.to_string()))
}

/// Load a checkpoint. With `expected_dim`, refuse a different embedding_dim.
/// Returns the model and the stored backend id.
pub fn load_checkpoint(
    path: &Path,
    expected_dim: Option<usize>,
) -> Result<(MatchModel, String), ModelError> {
    let err = |detail: String| ModelError::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    let file = File::open(path).map_err(|e| err(e.to_string()))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| err(e.to_string()))?;
    if &magic != MAGIC {
        return Err(err("not a trialmatch checkpoint".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|e| err(e.to_string()))?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header).map_err(|e| err(e.to_string()))?;
    let header: Header =
        serde_json::from_slice(&header).map_err(|e| err(format!("bad header: {e}")))?;
    if let Some(dim) = expected_dim {
        if dim != header.config.embedding_dim {
            return Err(err(format!(
                "embedding_dim {} does not match expected {dim}",
                header.config.embedding_dim
            )));
        }
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| err(e.to_string()))?;
    if bytes.len() != header.n_params * 8 {
        return Err(err(format!(
            "expected {} parameters, found {} bytes",
            header.n_params,
            bytes.len()
        )));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((
        MatchModel::from_params(header.config, params)?,
        header.backend,
    ))
}
