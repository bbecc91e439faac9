use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::{EmbedError, EmbedRequest, EmbeddingSequence, Provider};
use crate::corpus::tokenize;

const DOMAIN: &[u8] = b"bullyscan.hash-embed.v1";

fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f32> {
    let mut h = Sha256::new();
    h.update(DOMAIN);
    h.update(seed.to_le_bytes());
    h.update(token.as_bytes());
    let mut rng = ChaCha20Rng::from_seed(h.finalize().into());
    let raw: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // Unreachable in practice; keeps the unit-norm contract regardless.
        let mut v = vec![0.0; dim];
        v[0] = 1.0;
        return v;
    }
    raw.iter().map(|v| (v / norm) as f32).collect()
}

/// Deterministic offline embeddings: one unit vector per whitespace token,
/// drawn from a ChaCha20 stream seeded by SHA-256 of `(seed, token)`.
pub fn hash_embed(text: &str, dim: usize, seed: u64) -> Result<EmbeddingSequence, EmbedError> {
    if dim == 0 {
        return Err(EmbedError::Config("dim must be >= 1".into()));
    }
    let vectors: Vec<Vec<f32>> = tokenize(text).map(|t| token_vector(t, dim, seed)).collect();
    if vectors.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let (p, m) = HashProvider::tags(dim, seed);
    EmbeddingSequence::from_vectors(vectors, p, m)
}

#[derive(Debug, Clone)]
pub struct HashProvider {
    dim: usize,
    seed: u64,
    model_tag: String,
}

impl HashProvider {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            model_tag: Self::tags(dim, seed).1,
        }
    }

    fn tags(dim: usize, seed: u64) -> (&'static str, String) {
        ("hash", format!("hash-d{dim}-s{seed}"))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Provider for HashProvider {
    fn provider_tag(&self) -> &str {
        "hash"
    }

    fn model_tag(&self) -> &str {
        &self.model_tag
    }

    fn embed_batch(&self, inputs: &[EmbedRequest<'_>]) -> Result<Vec<EmbeddingSequence>, EmbedError> {
        inputs
            .iter()
            .map(|r| hash_embed(r.text, self.dim, self.seed))
            .collect()
    }
}
