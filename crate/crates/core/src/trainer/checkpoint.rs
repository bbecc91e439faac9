//! `CKPT` checkpoint files.
//!
//! Layout, integers little-endian: magic `CKPT`, `u32` format version, `u32`
//! length + UTF-8 JSON header, then each tensor in declaration order as
//! `u32` rank, `u32` dims…, `f32` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Checkpoint, EpochLog, TrainConfig};
use crate::nn::{EmbeddingTable, HeadParams, LstmParams, Matrix, Model, ParamSet, Vocab};

pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format error at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("unsupported checkpoint version {found} (this build reads version {CKPT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    provider_tag: String,
    model_tag: String,
    input_dim: usize,
    hidden: usize,
    vocab: Option<Vec<String>>,
    epoch_logs: Vec<EpochLog>,
    optimizer_steps: u64,
    corpus_provenance: String,
}

fn shapes(input_dim: usize, hidden: usize, table: Option<(usize, usize)>) -> Vec<Vec<usize>> {
    let mut s = Vec::new();
    for _ in 0..4 {
        s.push(vec![hidden, input_dim]);
        s.push(vec![hidden, hidden]);
        s.push(vec![hidden]);
    }
    s.push(vec![hidden]);
    s.push(vec![]);
    if let Some((rows, cols)) = table {
        s.push(vec![rows, cols]);
    }
    s
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let m = &ckpt.model;
    let header = Header {
        config: ckpt.config.clone(),
        provider_tag: ckpt.provider_tag.clone(),
        model_tag: ckpt.model_tag.clone(),
        input_dim: m.input_dim(),
        hidden: m.hidden(),
        vocab: m.table.as_ref().map(|t| t.vocab.known_tokens().to_vec()),
        epoch_logs: ckpt.epoch_logs.clone(),
        optimizer_steps: ckpt.optimizer_steps,
        corpus_provenance: ckpt.corpus_provenance.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let table_shape = m.table.as_ref().map(|t| (t.table.rows(), t.table.cols()));
    for (shape, data) in shapes(m.input_dim(), m.hidden(), table_shape)
        .iter()
        .zip(m.tensors())
    {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T, CheckpointError> {
        Err(CheckpointError::Format {
            offset: self.pos as u64,
            reason: reason.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!("truncated {what}"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CKPT_MAGIC {
        r.pos = 0;
        return r.fail("bad magic");
    }
    let version = r.u32("version")?;
    if version != CKPT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let len = r.u32("header length")? as usize;
    let header_at = r.pos;
    let header: Header = serde_json::from_slice(r.take(len, "header")?).map_err(|e| {
        CheckpointError::Format {
            offset: header_at as u64,
            reason: format!("header: {e}"),
        }
    })?;

    let (d, h) = (header.input_dim, header.hidden);
    let vocab = header.vocab.map(Vocab::from_tokens);
    let table_shape = vocab.as_ref().map(|v| (v.len(), d));
    let mut tensors: Vec<Vec<f64>> = Vec::new();
    for expected in shapes(d, h, table_shape) {
        let at = r.pos;
        let rank = r.u32("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("tensor dim")? as usize);
        }
        if dims != expected {
            r.pos = at;
            return r.fail(format!("tensor {} has shape {dims:?}, expected {expected:?}", tensors.len()));
        }
        let n: usize = dims.iter().product();
        let raw = r.take(n * 4, "tensor data")?;
        let vals: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            r.pos = at;
            return r.fail("non-finite tensor value");
        }
        tensors.push(vals);
    }
    if r.pos != bytes.len() {
        return r.fail(format!("{} trailing bytes", bytes.len() - r.pos));
    }

    let freeze = header.config.freeze_table;
    let mut model = Model {
        lstm: LstmParams::zeros(d, h),
        head: HeadParams::zeros(h),
        table: vocab.map(|v| EmbeddingTable {
            table: Matrix::zeros(v.len(), d),
            vocab: v,
            trainable: !freeze,
        }),
    };
    for (dst, src) in model.tensors_mut().into_iter().zip(&tensors) {
        dst.copy_from_slice(src);
    }
    Ok(Checkpoint {
        config: header.config,
        model,
        provider_tag: header.provider_tag,
        model_tag: header.model_tag,
        epoch_logs: header.epoch_logs,
        optimizer_steps: header.optimizer_steps,
        corpus_provenance: header.corpus_provenance,
    })
}

/// Writes through a temporary file in the target directory, then renames.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&encode_checkpoint(ckpt))?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CheckpointError::Io(e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}
