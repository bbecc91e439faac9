//! `EMB1` container for per-record token embedding sequences.
//!
//! Layout, all integers little-endian:
//! - magic `EMB1` (4 bytes), `u32` dim, `u32` record count
//! - per record: `u64` record id, `u32` vector count m, then m×dim `f32`, row-major

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{EmbedError, EmbedRequest, EmbeddingSequence, Provider};
use crate::corpus::Corpus;

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub dim: usize,
    pub records: BTreeMap<u64, EmbeddingSequence>,
}

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], EmbedError> {
        if self.remaining() < n {
            return Err(EmbedError::Format {
                offset: self.offset(),
                reason: format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32, EmbedError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64, EmbedError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, EmbedError> {
        let byte_len = n.checked_mul(4).ok_or_else(|| EmbedError::Format {
            offset: self.offset(),
            reason: format!("{what} length overflows"),
        })?;
        let start = self.offset();
        let raw = self.take(byte_len, what)?;
        let vals: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::Format {
                offset: start + 4 * i as u64,
                reason: "non-finite component".into(),
            });
        }
        Ok(vals)
    }
}

pub(crate) fn push_f32s(out: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_embedding_file<'a>(
    dim: usize,
    records: impl IntoIterator<Item = (u64, &'a EmbeddingSequence)>,
) -> Result<Vec<u8>, EmbedError> {
    let records: Vec<_> = records.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(EMB1_MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (id, seq) in records {
        if seq.dim() != dim {
            return Err(EmbedError::DimMismatch {
                expected: dim,
                found: seq.dim(),
            });
        }
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
        push_f32s(&mut out, seq.as_flat());
    }
    Ok(out)
}

pub fn write_embedding_file<'a>(
    path: &Path,
    dim: usize,
    records: impl IntoIterator<Item = (u64, &'a EmbeddingSequence)>,
) -> Result<(), EmbedError> {
    let bytes = encode_embedding_file(dim, records)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, &bytes)?;
    tmp.persist(path).map_err(|e| EmbedError::Io(e.error))?;
    Ok(())
}

/// Decodes an `EMB1` payload. Sequences carry the given tags.
pub fn decode_embedding_file(
    bytes: &[u8],
    provider_tag: &str,
    model_tag: &str,
) -> Result<EmbeddingFile, EmbedError> {
    let mut c = Cursor::new(bytes);
    let magic = c.take(4, "magic")?;
    if magic != EMB1_MAGIC {
        return Err(EmbedError::Format {
            offset: 0,
            reason: format!("bad magic {magic:?}"),
        });
    }
    let dim = c.u32("dim")? as usize;
    let count = c.u32("record count")?;
    if dim == 0 && count > 0 {
        return Err(EmbedError::Format {
            offset: 4,
            reason: "dim 0 with records present".into(),
        });
    }
    let mut records = BTreeMap::new();
    for _ in 0..count {
        let at = c.offset();
        let id = c.u64("record id")?;
        let m_at = c.offset();
        let m = c.u32("vector count")? as usize;
        if m == 0 {
            return Err(EmbedError::Format {
                offset: m_at,
                reason: format!("record {id} has no vectors"),
            });
        }
        let data = c.f32s(m * dim, "vector payload")?;
        let seq = EmbeddingSequence::from_flat(dim, data, provider_tag, model_tag)?;
        if records.insert(id, seq).is_some() {
            return Err(EmbedError::Format {
                offset: at,
                reason: format!("duplicate record id {id}"),
            });
        }
    }
    if c.remaining() != 0 {
        return Err(EmbedError::Format {
            offset: c.offset(),
            reason: format!("{} trailing bytes", c.remaining()),
        });
    }
    Ok(EmbeddingFile { dim, records })
}

fn file_model_tag(bytes: &[u8]) -> String {
    format!("emb1:{}", &hex::encode(Sha256::digest(bytes))[..16])
}

pub fn load_embedding_file(path: &Path) -> Result<EmbeddingFile, EmbedError> {
    let bytes = fs::read(path)?;
    decode_embedding_file(&bytes, "file", &file_model_tag(&bytes))
}

/// Serves stored sequences by record id. Texts registered from a corpus can
/// also be resolved without an id.
#[derive(Debug, Clone)]
pub struct FileProvider {
    file: EmbeddingFile,
    model_tag: String,
    by_text: HashMap<String, u64>,
}

impl FileProvider {
    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        let bytes = fs::read(path)?;
        let model_tag = file_model_tag(&bytes);
        let file = decode_embedding_file(&bytes, "file", &model_tag)?;
        Ok(Self {
            file,
            model_tag,
            by_text: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.file.dim
    }

    pub fn register_texts(&mut self, corpus: &Corpus) {
        for r in &corpus.records {
            self.by_text.entry(r.text()).or_insert(r.record_id);
        }
    }
}

impl Provider for FileProvider {
    fn provider_tag(&self) -> &str {
        "file"
    }

    fn model_tag(&self) -> &str {
        &self.model_tag
    }

    fn embed_batch(&self, inputs: &[EmbedRequest<'_>]) -> Result<Vec<EmbeddingSequence>, EmbedError> {
        inputs
            .iter()
            .map(|r| {
                let id = r.record_id.or_else(|| self.by_text.get(r.text).copied());
                id.and_then(|id| self.file.records.get(&id))
                    .cloned()
                    .ok_or(EmbedError::MissingEmbedding(r.record_id))
            })
            .collect()
    }
}
