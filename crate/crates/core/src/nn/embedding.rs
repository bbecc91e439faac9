use std::collections::HashMap;

use rand::Rng;

use super::matrix::Matrix;

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Token ↔ index map. Index 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds from tokens in first-occurrence order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::from_tokens(Vec::new());
        for t in tokens {
            if !v.index.contains_key(t) {
                v.index.insert(t.to_string(), v.tokens.len());
                v.tokens.push(t.to_string());
            }
        }
        v
    }

    /// Rebuilds from a serialized token list that excludes the unknown slot.
    pub fn from_tokens(known: Vec<String>) -> Self {
        let mut tokens = Vec::with_capacity(known.len() + 1);
        tokens.push(UNKNOWN_TOKEN.to_string());
        tokens.extend(known);
        let index = tokens
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    /// Known tokens in index order, without the unknown slot.
    pub fn known_tokens(&self) -> &[String] {
        &self.tokens[1..]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }
}

/// Learned token embeddings for the baseline classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub vocab: Vocab,
    /// vocab_size × embed_dim
    pub table: Matrix,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn init(vocab: Vocab, embed_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (embed_dim as f64).sqrt();
        let table = Matrix::uniform(vocab.len(), embed_dim, bound, rng);
        Self {
            vocab,
            table,
            trainable: true,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.table.cols()
    }

    pub fn indices<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<usize> {
        tokens.into_iter().map(|t| self.vocab.index_of(t)).collect()
    }

    /// One row per index.
    pub fn lookup(&self, indices: &[usize]) -> Vec<Vec<f64>> {
        indices.iter().map(|&i| self.table.row(i).to_vec()).collect()
    }

    /// Adds each input gradient into the row it was looked up from.
    pub fn scatter_grad(d_table: &mut Matrix, indices: &[usize], dx: &[Vec<f64>]) {
        for (&i, d) in indices.iter().zip(dx) {
            d_table
                .row_mut(i)
                .iter_mut()
                .zip(d)
                .for_each(|(r, v)| *r += v);
        }
    }
}
