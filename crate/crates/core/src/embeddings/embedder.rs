use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use super::{
    CacheKey, EmbedError, EmbedRequest, EmbeddingCache, EmbeddingSequence, FileProvider,
    HashProvider, Provider, ProviderConfig, ProviderKind, RemoteProvider,
};
use crate::corpus::Corpus;

/// A provider behind the persistent cache, with batching for whole corpora.
pub struct Embedder {
    provider: Arc<dyn Provider>,
    cache: EmbeddingCache,
    max_parallel: usize,
    batch_size: usize,
    calls: AtomicU64,
    dim: OnceLock<usize>,
}

impl Embedder {
    pub fn new(provider: Arc<dyn Provider>, cache: EmbeddingCache) -> Self {
        Self {
            provider,
            cache,
            max_parallel: 1,
            batch_size: 64,
            calls: AtomicU64::new(0),
            dim: OnceLock::new(),
        }
    }

    pub fn with_parallelism(mut self, max_parallel: usize, batch_size: usize) -> Self {
        self.max_parallel = max_parallel.max(1);
        self.batch_size = batch_size.max(1);
        self
    }

    /// Builds the configured provider. `cache_path` of `None` keeps the cache in memory.
    pub fn from_config(cfg: &ProviderConfig, cache_path: Option<&Path>) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let provider: Arc<dyn Provider> = match cfg.kind {
            ProviderKind::Hash => Arc::new(HashProvider::new(cfg.dim.unwrap(), cfg.seed.unwrap_or(0))),
            ProviderKind::File => Arc::new(FileProvider::open(cfg.file_path.as_deref().unwrap())?),
            ProviderKind::Remote => Arc::new(RemoteProvider::from_config(cfg)?),
        };
        let cache = match cache_path {
            Some(p) => EmbeddingCache::open(p)?,
            None => EmbeddingCache::in_memory(),
        };
        Ok(Self::new(provider, cache).with_parallelism(cfg.max_parallel_requests, cfg.batch_size))
    }

    pub fn provider(&self) -> &Arc<dyn Provider> {
        &self.provider
    }

    pub fn provider_tag(&self) -> &str {
        self.provider.provider_tag()
    }

    pub fn model_tag(&self) -> &str {
        self.provider.model_tag()
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    /// Provider batch calls made through this embedder.
    pub fn provider_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn key(&self, text: &str) -> CacheKey {
        CacheKey::new(text, self.provider.provider_tag(), self.provider.model_tag())
    }

    fn check_dim(&self, seq: &EmbeddingSequence) -> Result<(), EmbedError> {
        let expected = *self.dim.get_or_init(|| seq.dim());
        if expected != seq.dim() {
            return Err(EmbedError::DimMismatch {
                expected,
                found: seq.dim(),
            });
        }
        Ok(())
    }

    fn call(&self, inputs: &[EmbedRequest<'_>]) -> Result<Vec<EmbeddingSequence>, EmbedError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let out = self.provider.embed_batch(inputs)?;
        if out.len() != inputs.len() {
            return Err(EmbedError::InvalidResponse(format!(
                "provider returned {} sequences for {} inputs",
                out.len(),
                inputs.len()
            )));
        }
        let (p, m) = (self.provider.provider_tag(), self.provider.model_tag());
        out.into_iter()
            .map(|s| {
                self.check_dim(&s)?;
                Ok(s.with_tags(p, m))
            })
            .collect()
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingSequence, EmbedError> {
        self.embed_request(EmbedRequest {
            record_id: None,
            text,
        })
    }

    pub fn embed_request(&self, req: EmbedRequest<'_>) -> Result<EmbeddingSequence, EmbedError> {
        if req.text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let key = self.key(req.text);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let seq = self.call(&[req])?.pop().unwrap();
        self.cache.insert(key, seq.clone())?;
        Ok(seq)
    }

    /// Embeds every record, serving cached texts without provider calls.
    ///
    /// Batches run on up to `max_parallel` threads and each finished batch is
    /// persisted immediately, so an interrupted run resumes where it stopped.
    /// The returned map does not depend on completion order.
    pub fn embed_corpus(&self, corpus: &Corpus) -> Result<BTreeMap<u64, EmbeddingSequence>, EmbedError> {
        let texts: Vec<(u64, String)> = corpus
            .records
            .iter()
            .map(|r| (r.record_id, r.text()))
            .collect();

        let mut pending: Vec<(CacheKey, u64, &str)> = Vec::new();
        let mut waiting: HashMap<CacheKey, Vec<u64>> = HashMap::new();
        let mut failed: Vec<(u64, String)> = Vec::new();
        for (id, text) in &texts {
            if text.trim().is_empty() {
                failed.push((*id, EmbedError::EmptyText.to_string()));
                continue;
            }
            let key = self.key(text);
            if self.cache.contains(&key) {
                continue;
            }
            match waiting.get_mut(&key) {
                Some(ids) => ids.push(*id),
                None => {
                    waiting.insert(key.clone(), vec![*id]);
                    pending.push((key, *id, text.as_str()));
                }
            }
        }

        let batches: Vec<&[(CacheKey, u64, &str)]> = pending.chunks(self.batch_size).collect();
        let next = AtomicUsize::new(0);
        let errors: Mutex<Vec<(usize, String)>> = Mutex::new(Vec::new());
        let workers = self.max_parallel.min(batches.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let b = next.fetch_add(1, Ordering::SeqCst);
                    let Some(batch) = batches.get(b) else { break };
                    let reqs: Vec<EmbedRequest<'_>> = batch
                        .iter()
                        .map(|(_, id, text)| EmbedRequest {
                            record_id: Some(*id),
                            text,
                        })
                        .collect();
                    let stored = match self.call(&reqs) {
                        Ok(seqs) => batch
                            .iter()
                            .zip(seqs)
                            .try_for_each(|((key, _, _), seq)| self.cache.insert(key.clone(), seq)),
                        // A local data error names one input; retry singly so the rest still land.
                        Err(e) if reqs.len() > 1 && !e.is_provider_error() => {
                            let mut last = Ok(());
                            for ((key, _, _), req) in batch.iter().zip(&reqs) {
                                let one = self
                                    .call(std::slice::from_ref(req))
                                    .and_then(|mut s| self.cache.insert(key.clone(), s.pop().unwrap()));
                                if one.is_err() {
                                    last = one;
                                }
                            }
                            last
                        }
                        Err(e) => Err(e),
                    };
                    if let Err(e) = stored {
                        log::warn!("embedding batch {b} failed: {e}");
                        errors.lock().unwrap().push((b, e.to_string()));
                    }
                });
            }
        });

        for (b, reason) in errors.into_inner().unwrap() {
            for (key, _, _) in batches[b] {
                if !self.cache.contains(key) {
                    for id in &waiting[key] {
                        failed.push((*id, reason.clone()));
                    }
                }
            }
        }
        if !failed.is_empty() {
            failed.sort();
            return Err(EmbedError::Incomplete { failed });
        }

        let mut out = BTreeMap::new();
        for (id, text) in &texts {
            let seq = self
                .cache
                .get(&self.key(text))
                .ok_or(EmbedError::MissingEmbedding(Some(*id)))?;
            out.insert(*id, seq);
        }
        Ok(out)
    }
}
