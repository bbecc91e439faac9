//! Append-only persistent embedding cache.
//!
//! File layout: magic `EMC1`, then entries of
//! `[32-byte text digest][u32 len][provider tag][u32 len][model tag][u32 dim][u32 m][m×dim f32]`.
//! A torn trailing entry from an interrupted write is discarded on open.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use sha2::{Digest, Sha256};

use super::file::{push_f32s, Cursor};
use super::{EmbedError, EmbeddingSequence};

const CACHE_MAGIC: &[u8; 4] = b"EMC1";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub text_digest: [u8; 32],
    pub provider_tag: String,
    pub model_tag: String,
}

impl CacheKey {
    pub fn new(text: &str, provider_tag: &str, model_tag: &str) -> Self {
        Self {
            text_digest: Sha256::digest(text.as_bytes()).into(),
            provider_tag: provider_tag.to_string(),
            model_tag: model_tag.to_string(),
        }
    }
}

#[derive(Debug)]
pub struct EmbeddingCache {
    index: RwLock<HashMap<CacheKey, EmbeddingSequence>>,
    sink: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

fn encode_entry(key: &CacheKey, seq: &EmbeddingSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(48 + seq.as_flat().len() * 4);
    out.extend_from_slice(&key.text_digest);
    for tag in [&key.provider_tag, &key.model_tag] {
        out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
        out.extend_from_slice(tag.as_bytes());
    }
    out.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    push_f32s(&mut out, seq.as_flat());
    out
}

fn decode_entry(c: &mut Cursor<'_>) -> Result<(CacheKey, EmbeddingSequence), EmbedError> {
    let text_digest: [u8; 32] = c.take(32, "digest")?.try_into().unwrap();
    let mut tags = Vec::with_capacity(2);
    for what in ["provider tag", "model tag"] {
        let len = c.u32(what)? as usize;
        let at = c.offset();
        let raw = c.take(len, what)?;
        let s = std::str::from_utf8(raw).map_err(|_| EmbedError::Format {
            offset: at,
            reason: format!("{what} is not UTF-8"),
        })?;
        tags.push(s.to_string());
    }
    let dim = c.u32("dim")? as usize;
    let m = c.u32("vector count")? as usize;
    let data = c.f32s(dim * m, "vectors")?;
    let seq = EmbeddingSequence::from_flat(dim, data, &tags[0], &tags[1])?;
    let model_tag = tags.pop().unwrap();
    let provider_tag = tags.pop().unwrap();
    Ok((
        CacheKey {
            text_digest,
            provider_tag,
            model_tag,
        },
        seq,
    ))
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self {
            index: RwLock::new(HashMap::new()),
            sink: None,
            path: None,
        }
    }

    /// Opens or creates a cache file and loads its entries.
    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let mut index = HashMap::new();
        if bytes.is_empty() {
            file.write_all(CACHE_MAGIC)?;
            file.flush()?;
        } else {
            if bytes.len() < 4 || &bytes[..4] != CACHE_MAGIC {
                return Err(EmbedError::Format {
                    offset: 0,
                    reason: format!("{} is not an embedding cache", path.display()),
                });
            }
            let mut c = Cursor::new(&bytes[4..]);
            let mut good = 0u64;
            while c.remaining() > 0 {
                match decode_entry(&mut c) {
                    Ok((k, v)) => {
                        index.insert(k, v);
                        good = c.offset();
                    }
                    Err(e) => {
                        log::warn!(
                            "discarding torn cache tail at byte {} of {}: {e}",
                            good + 4,
                            path.display()
                        );
                        file.set_len(good + 4)?;
                        file.seek(SeekFrom::End(0))?;
                        break;
                    }
                }
            }
        }
        Ok(Self {
            index: RwLock::new(index),
            sink: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &CacheKey) -> Option<EmbeddingSequence> {
        self.index.read().unwrap().get(key).cloned()
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.index.read().unwrap().contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores an entry, persisting it before it becomes visible. An existing
    /// entry for the key is kept.
    pub fn insert(&self, key: CacheKey, seq: EmbeddingSequence) -> Result<(), EmbedError> {
        if self.contains(&key) {
            return Ok(());
        }
        if let Some(sink) = &self.sink {
            let mut f = sink.lock().unwrap();
            f.write_all(&encode_entry(&key, &seq))?;
            f.flush()?;
        }
        self.index.write().unwrap().entry(key).or_insert(seq);
        Ok(())
    }
}
