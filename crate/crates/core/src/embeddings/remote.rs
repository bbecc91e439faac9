//! Client for a remote embeddings endpoint.
//!
//! Requests are `POST {"model": ..., "input": [...]}` with a bearer token read
//! from [`API_KEY_ENV`]; vectors come back under `data[i].embedding`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use rand::Rng;
use serde::Deserialize;

use super::{EmbedError, EmbedRequest, EmbeddingSequence, Provider, ProviderConfig};

pub const API_KEY_ENV: &str = "EMBED_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

/// Sends one JSON POST. Implementations must not treat HTTP error statuses as
/// transport failures.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: &str, body: &str) -> Result<HttpReply, TransportError>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(60))
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, bearer: &str, body: &str) -> Result<HttpReply, TransportError> {
        let mut resp = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {bearer}"))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

/// Exponential backoff with jitter: attempt k waits a uniform draw from
/// `[d/2, d]` where `d = min(cap, base·2^k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub cap: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            cap: Duration::from_secs(32),
        }
    }
}

impl Backoff {
    pub fn none() -> Self {
        Self {
            base: Duration::ZERO,
            cap: Duration::ZERO,
        }
    }

    pub fn ceiling(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.min(30)).unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(self.cap)
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        let d = self.ceiling(attempt);
        if d.is_zero() {
            return d;
        }
        d.mul_f64(rand::thread_rng().gen_range(0.5..=1.0))
    }
}

/// Splits on sentence-final punctuation; falls back to the whole text.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        let next_is_break = chars.get(k + 1).is_none_or(|&(_, n)| n.is_whitespace());
        if matches!(c, '.' | '!' | '?') && next_is_break {
            let end = i + c.len_utf8();
            let piece = text[start..end].trim();
            if !piece.is_empty() {
                out.push(piece);
            }
            start = end;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    if out.is_empty() {
        out.push(text.trim());
    }
    out
}

#[derive(Deserialize)]
struct ResponseBody {
    data: Vec<ResponseItem>,
}

#[derive(Deserialize)]
struct ResponseItem {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

enum Attempt {
    Done(Vec<Vec<f32>>),
    Retry(String),
    Fatal(EmbedError),
}

pub struct RemoteProvider {
    endpoint: String,
    model: String,
    model_tag: String,
    chunked: bool,
    api_key: Option<String>,
    retry_limit: u32,
    backoff: Backoff,
    transport: Box<dyn Transport>,
    requests: AtomicU64,
    retries: AtomicU64,
}

impl RemoteProvider {
    /// Builds from config with the real HTTP transport and the key from the environment.
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, EmbedError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_transport(cfg, key, Box::new(UreqTransport::default()))
    }

    pub fn with_transport(
        cfg: &ProviderConfig,
        api_key: Option<String>,
        transport: Box<dyn Transport>,
    ) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let model = cfg.model_name.clone().unwrap_or_default();
        let model_tag = if cfg.chunked {
            format!("{model}#chunked")
        } else {
            model.clone()
        };
        Ok(Self {
            endpoint: cfg.endpoint_url.clone().unwrap_or_default(),
            model,
            model_tag,
            chunked: cfg.chunked,
            api_key,
            retry_limit: cfg.retry_limit,
            backoff: Backoff::default(),
            transport,
            requests: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        })
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    /// HTTP requests issued, including retried ones.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    fn attempt(&self, key: &str, body: &str, expected: usize) -> Attempt {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let reply = match self.transport.post_json(&self.endpoint, key, body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        match reply.status {
            200..=299 => match parse_vectors(&reply.body, expected) {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(EmbedError::Credential(format!(
                "status {}: {}",
                reply.status,
                snippet(&reply.body)
            ))),
            408 | 409 | 429 | 500..=599 => {
                Attempt::Retry(format!("status {}: {}", reply.status, snippet(&reply.body)))
            }
            status => Attempt::Fatal(EmbedError::Rejected {
                status,
                body: snippet(&reply.body).to_string(),
            }),
        }
    }

    fn post_with_retry(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, EmbedError> {
        let key = self.api_key.as_deref().ok_or_else(|| {
            EmbedError::Credential(format!("{API_KEY_ENV} is not set"))
        })?;
        let body = serde_json::json!({ "model": self.model, "input": texts }).to_string();
        let mut attempt = 0u32;
        loop {
            match self.attempt(key, &body, texts.len()) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(reason) => {
                    if attempt >= self.retry_limit {
                        return Err(EmbedError::ProviderUnavailable {
                            attempts: attempt + 1,
                            last: reason,
                        });
                    }
                    let wait = self.backoff.delay(attempt);
                    log::warn!("embedding request failed ({reason}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                    self.retries.fetch_add(1, Ordering::SeqCst);
                    attempt += 1;
                }
            }
        }
    }
}

fn snippet(body: &str) -> &str {
    match body.char_indices().nth(200) {
        Some((i, _)) => &body[..i],
        None => body,
    }
}

fn parse_vectors(body: &str, expected: usize) -> Result<Vec<Vec<f32>>, EmbedError> {
    let parsed: ResponseBody =
        serde_json::from_str(body).map_err(|e| EmbedError::InvalidResponse(e.to_string()))?;
    if parsed.data.len() != expected {
        return Err(EmbedError::InvalidResponse(format!(
            "expected {expected} embeddings, got {}",
            parsed.data.len()
        )));
    }
    let mut slots: Vec<Option<Vec<f32>>> = vec![None; expected];
    for (pos, item) in parsed.data.into_iter().enumerate() {
        let i = item.index.unwrap_or(pos);
        if i >= expected || slots[i].is_some() {
            return Err(EmbedError::InvalidResponse(format!("bad or repeated index {i}")));
        }
        let v: Vec<f32> = item.embedding.iter().map(|&x| x as f32).collect();
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::InvalidResponse(format!(
                "embedding {i} is empty or has non-finite components"
            )));
        }
        slots[i] = Some(v);
    }
    let out: Vec<Vec<f32>> = slots.into_iter().map(Option::unwrap).collect();
    let dim = out[0].len();
    if let Some(bad) = out.iter().find(|v| v.len() != dim) {
        return Err(EmbedError::DimMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    Ok(out)
}

impl Provider for RemoteProvider {
    fn provider_tag(&self) -> &str {
        "remote"
    }

    fn model_tag(&self) -> &str {
        &self.model_tag
    }

    fn embed_batch(&self, inputs: &[EmbedRequest<'_>]) -> Result<Vec<EmbeddingSequence>, EmbedError> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let pieces: Vec<Vec<&str>> = inputs
            .iter()
            .map(|r| {
                if self.chunked {
                    split_sentences(r.text)
                } else {
                    vec![r.text]
                }
            })
            .collect();
        let flat: Vec<&str> = pieces.iter().flatten().copied().collect();
        let mut vectors = self.post_with_retry(&flat)?.into_iter();
        pieces
            .iter()
            .map(|p| {
                let seq: Vec<Vec<f32>> = vectors.by_ref().take(p.len()).collect();
                EmbeddingSequence::from_vectors(seq, "remote", &self.model_tag)
            })
            .collect()
    }

    fn retries(&self) -> u64 {
        self.retries.load(Ordering::SeqCst)
    }
}
