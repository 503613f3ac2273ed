//! Self-describing binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MCOLWGT\0"
//! format     u32      CHECKPOINT_FORMAT
//! header_len u64
//! header     JSON     {version, fingerprint, config, blocks: [{name, shape}]}
//! payload    f64 LE   every block's data, in header order
//! digest     32 bytes SHA-256 of everything above
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eecnn::{EeCnnConfig, ModelWeights, ParamBlock};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: u32 = 1;
const MAGIC: &[u8; 8] = b"MCOLWGT\0";
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    fingerprint: String,
    config: EeCnnConfig,
    blocks: Vec<BlockHeader>,
}

#[derive(Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    shape: Vec<usize>,
}

pub fn to_bytes(weights: &ModelWeights) -> Vec<u8> {
    let header = Header {
        version: weights.version,
        fingerprint: weights.fingerprint.clone(),
        config: weights.config.clone(),
        blocks: weights
            .blocks
            .iter()
            .map(|b| BlockHeader {
                name: b.name.clone(),
                shape: b.shape.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(header.len() + 8 * weights.param_count() + 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_FORMAT.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for block in &weights.blocks {
        for v in &block.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelWeights> {
    let corrupt = |m: &str| Error::Corrupt(m.to_string());
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN {
        return Err(corrupt("file too short"));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (truncated or modified file)"));
    }
    let format = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if format != CHECKPOINT_FORMAT {
        return Err(Error::Corrupt(format!(
            "unsupported format version {format}"
        )));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length out of bounds"))?;
    let header: Header = serde_json::from_slice(&body[20..header_end])
        .map_err(|e| Error::Corrupt(format!("header: {e}")))?;
    if header.config.fingerprint() != header.fingerprint {
        return Err(corrupt("stored fingerprint does not match stored config"));
    }
    let mut payload = &body[header_end..];
    let mut blocks = Vec::with_capacity(header.blocks.len());
    for b in header.blocks {
        let n: usize = b.shape.iter().product();
        let len = n.checked_mul(8).ok_or_else(|| corrupt("block too large"))?;
        if payload.len() < len {
            return Err(Error::Corrupt(format!("block {} truncated", b.name)));
        }
        let (raw, rest) = payload.split_at(len);
        payload = rest;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        blocks.push(ParamBlock {
            name: b.name,
            shape: b.shape,
            data,
        });
    }
    if !payload.is_empty() {
        return Err(corrupt("trailing bytes after payload"));
    }
    Ok(ModelWeights {
        version: header.version,
        fingerprint: header.fingerprint,
        config: header.config,
        blocks,
    })
}

/// Writes to a temporary sibling and renames it into place.
pub fn save_checkpoint(weights: &ModelWeights, path: &Path) -> Result<()> {
    let bytes = to_bytes(weights);
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelWeights> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint and checks it belongs to `config`.
pub fn load_checkpoint_for(path: &Path, config: &EeCnnConfig) -> Result<ModelWeights> {
    let w = load_checkpoint(path)?;
    w.verify(config)?;
    Ok(w)
}
