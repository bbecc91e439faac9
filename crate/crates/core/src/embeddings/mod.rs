//! Uniform "text to sequence of vectors" interface over several providers,
//! backed by a persistent content-addressed cache.

mod cache;
mod embedder;
mod file;
mod hash;
mod remote;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheKey, EmbeddingCache};
pub use embedder::Embedder;
pub use file::{
    decode_embedding_file, encode_embedding_file, load_embedding_file, write_embedding_file,
    EmbeddingFile, FileProvider, EMB1_MAGIC,
};
pub use hash::{hash_embed, HashProvider};
pub use remote::{
    split_sentences, Backoff, HttpReply, RemoteProvider, Transport, TransportError, UreqTransport,
    API_KEY_ENV,
};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text is empty after trimming")]
    EmptyText,
    #[error("provider unavailable after {attempts} attempts: {last}")]
    ProviderUnavailable { attempts: u32, last: String },
    #[error("credential rejected: {0}")]
    Credential(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid provider response: {0}")]
    InvalidResponse(String),
    #[error("no stored embedding for record {0:?}")]
    MissingEmbedding(Option<u64>),
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("format error at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{} record(s) left unembedded, first failure on record {}: {}", failed.len(), failed[0].0, failed[0].1)]
    Incomplete { failed: Vec<(u64, String)> },
}

impl EmbedError {
    /// True for errors caused by the provider side rather than local data.
    pub fn is_provider_error(&self) -> bool {
        match self {
            EmbedError::ProviderUnavailable { .. }
            | EmbedError::Credential(_)
            | EmbedError::Rejected { .. }
            | EmbedError::InvalidResponse(_) => true,
            EmbedError::Incomplete { .. } => true,
            _ => false,
        }
    }
}

/// Ordered list of equal-length finite vectors describing one text.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    dim: usize,
    data: Vec<f32>,
    provider_tag: String,
    model_tag: String,
}

impl EmbeddingSequence {
    /// Builds a sequence from row-major data holding `data.len() / dim` vectors.
    pub fn from_flat(
        dim: usize,
        data: Vec<f32>,
        provider_tag: impl Into<String>,
        model_tag: impl Into<String>,
    ) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::InvalidResponse("dimension 0".into()));
        }
        if data.is_empty() || data.len() % dim != 0 {
            return Err(EmbedError::InvalidResponse(format!(
                "{} components do not form a non-empty sequence of dim {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidResponse(format!(
                "non-finite component at index {i}"
            )));
        }
        Ok(Self {
            dim,
            data,
            provider_tag: provider_tag.into(),
            model_tag: model_tag.into(),
        })
    }

    pub fn from_vectors(
        vectors: Vec<Vec<f32>>,
        provider_tag: impl Into<String>,
        model_tag: impl Into<String>,
    ) -> Result<Self, EmbedError> {
        let dim = vectors.first().map_or(0, Vec::len);
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(EmbedError::DimMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::from_flat(dim, vectors.concat(), provider_tag, model_tag)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of vectors.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub(crate) fn with_tags(mut self, provider_tag: &str, model_tag: &str) -> Self {
        self.provider_tag = provider_tag.to_string();
        self.model_tag = model_tag.to_string();
        self
    }
}

/// One input to a provider. The record id is only used by providers that
/// store embeddings per record.
#[derive(Debug, Clone, Copy)]
pub struct EmbedRequest<'a> {
    pub record_id: Option<u64>,
    pub text: &'a str,
}

/// Source of embeddings for batches of texts.
pub trait Provider: Send + Sync {
    fn provider_tag(&self) -> &str;
    fn model_tag(&self) -> &str;
    /// Embeds every input, returning sequences in input order.
    fn embed_batch(&self, inputs: &[EmbedRequest<'_>]) -> Result<Vec<EmbeddingSequence>, EmbedError>;
    /// Retries performed so far, for providers that retry.
    fn retries(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    File,
    Hash,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(ProviderKind::Remote),
            "file" => Ok(ProviderKind::File),
            "hash" => Ok(ProviderKind::Hash),
            other => Err(format!("unknown provider `{other}`")),
        }
    }
}

fn default_parallel() -> usize {
    4
}
fn default_retry_limit() -> u32 {
    5
}
fn default_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_parallel")]
    pub max_parallel_requests: usize,
    /// Retries after the first attempt of a remote request.
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    /// Inputs per provider request.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Split remote inputs into sentences and embed each one.
    #[serde(default)]
    pub chunked: bool,
}

impl ProviderConfig {
    pub fn hash(dim: usize, seed: u64) -> Self {
        Self {
            kind: ProviderKind::Hash,
            dim: Some(dim),
            seed: Some(seed),
            ..Self::empty(ProviderKind::Hash)
        }
    }

    pub fn remote(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint_url: Some(endpoint_url.into()),
            model_name: Some(model_name.into()),
            ..Self::empty(ProviderKind::Remote)
        }
    }

    pub fn file(path: impl Into<PathBuf>) -> Self {
        Self {
            file_path: Some(path.into()),
            ..Self::empty(ProviderKind::File)
        }
    }

    fn empty(kind: ProviderKind) -> Self {
        Self {
            kind,
            endpoint_url: None,
            model_name: None,
            file_path: None,
            dim: None,
            seed: None,
            max_parallel_requests: default_parallel(),
            retry_limit: default_retry_limit(),
            batch_size: default_batch(),
            chunked: false,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        let missing = |field: &str| {
            Err(EmbedError::Config(format!(
                "{field} is required for the {:?} provider",
                self.kind
            )))
        };
        if self.max_parallel_requests == 0 {
            return Err(EmbedError::Config("max_parallel_requests must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(EmbedError::Config("batch_size must be >= 1".into()));
        }
        match self.kind {
            ProviderKind::Remote if self.endpoint_url.is_none() => missing("endpoint_url"),
            ProviderKind::Remote if self.model_name.is_none() => missing("model_name"),
            ProviderKind::File if self.file_path.is_none() => missing("file_path"),
            ProviderKind::Hash if self.dim.is_none() => missing("dim"),
            ProviderKind::Hash if self.dim == Some(0) => {
                Err(EmbedError::Config("dim must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}
