//! Versioned binary container: magic, u32 header length, JSON header, then
//! little-endian f32 blocks in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::models::NetworkSpec;

pub const MAGIC: &[u8; 8] = b"DOORLAB1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint not found: {0}")]
    NotFound(String),
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not a checkpoint file)")]
    BadMagic,
    #[error("checkpoint truncated: {0}")]
    Truncated(&'static str),
    #[error("checkpoint header is not valid JSON: {0}")]
    Header(#[from] serde_json::Error),
    #[error("observation layout mismatch: checkpoint has {found:?}, expected {expected:?}")]
    LayoutMismatch { expected: String, found: String },
    #[error("block {name} has {found} values, expected {expected}")]
    BlockSize { name: String, expected: usize, found: usize },
    #[error("missing block {0}")]
    MissingBlock(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub layout_version: String,
    pub spec: NetworkSpec,
    pub seed: u64,
    pub step: u64,
    pub blocks: Vec<BlockInfo>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub blocks: Vec<(String, Vec<f32>)>,
}

impl Checkpoint {
    pub fn new(layout_version: &str, spec: NetworkSpec, seed: u64, step: u64, meta: serde_json::Value) -> Self {
        Self {
            header: CheckpointHeader {
                layout_version: layout_version.to_string(),
                spec,
                seed,
                step,
                blocks: Vec::new(),
                meta,
            },
            blocks: Vec::new(),
        }
    }

    pub fn with_block(mut self, name: &str, data: Vec<f32>) -> Self {
        self.blocks.push((name.to_string(), data));
        self
    }

    pub fn block(&self, name: &str) -> Result<&[f32], CheckpointError> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| CheckpointError::MissingBlock(name.to_string()))
    }

    pub fn params(&self) -> Result<&[f32], CheckpointError> {
        let p = self.block("params")?;
        let expected = self.header.spec.num_params();
        if p.len() != expected {
            return Err(CheckpointError::BlockSize {
                name: "params".into(),
                expected,
                found: p.len(),
            });
        }
        Ok(p)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = self.header.clone();
        header.blocks = self
            .blocks
            .iter()
            .map(|(n, v)| BlockInfo {
                name: n.clone(),
                len: v.len(),
            })
            .collect();
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 4 * self.blocks.iter().map(|b| b.1.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, v) in &self.blocks {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let rest = &bytes[MAGIC.len()..];
        if rest.len() < 4 {
            return Err(CheckpointError::Truncated("header length"));
        }
        let hlen = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        let rest = &rest[4..];
        if rest.len() < hlen {
            return Err(CheckpointError::Truncated("header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&rest[..hlen])?;
        let mut data = &rest[hlen..];
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for b in &header.blocks {
            let n = b.len * 4;
            if data.len() < n {
                return Err(CheckpointError::Truncated("parameter block"));
            }
            let v = data[..n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blocks.push((b.name.clone(), v));
            data = &data[n..];
        }
        Ok(Self { header, blocks })
    }

    /// SHA-256 of the serialized container.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&ckpt.to_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a checkpoint and reject it unless its layout version equals
/// `expected_layout`.
pub fn load_checkpoint(path: &Path, expected_layout: &str) -> Result<Checkpoint, CheckpointError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CheckpointError::NotFound(path.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    let ck = Checkpoint::from_bytes(&bytes)?;
    if ck.header.layout_version != expected_layout {
        return Err(CheckpointError::LayoutMismatch {
            expected: expected_layout.to_string(),
            found: ck.header.layout_version.clone(),
        });
    }
    Ok(ck)
}
