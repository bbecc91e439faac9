//! Stratified splitting, mini-batch training, prediction and evaluation.

mod checkpoint;

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError,
    CKPT_MAGIC, CKPT_VERSION,
};

use crate::corpus::{clean_post, tokenize, CleanRecord, Corpus, BULLYING, NOT_BULLYING};
use crate::embeddings::{EmbedError, EmbedRequest, Embedder, EmbeddingSequence, ProviderConfig};
use crate::metrics::{ConfusionMatrix, MetricsError, MetricsReport};
use crate::nn::{
    adam_step, clip_gradients, AdamState, DropoutMode, EmbeddingTable, Gradients, Model,
    ModelInput, NnError, ParamSet, Vocab,
};

/// Provider tag recorded for the learned-table baseline.
pub const BASELINE_TAG: &str = "baseline";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("cannot stratify: {0}")]
    Stratification(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: u64 },
    #[error("trained weights do not fit in f32 (tensor {tensor})")]
    NonFiniteWeights { tensor: String },
    #[error("checkpoint expects embeddings {expected}, provider gives {found}")]
    ProviderMismatch { expected: String, found: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("record {record_id}: {source}")]
    Record {
        record_id: u64,
        #[source]
        source: Box<TrainError>,
    },
}

fn d_lr() -> f64 {
    0.001
}
fn d_epochs() -> usize {
    10
}
fn d_split() -> f64 {
    0.8
}
fn d_batch() -> usize {
    32
}
fn d_clip() -> f64 {
    5.0
}
fn d_dropout() -> f64 {
    0.2
}
fn d_hidden() -> usize {
    128
}
fn d_embed_dim() -> usize {
    64
}
fn d_provider() -> ProviderConfig {
    ProviderConfig::hash(64, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_split")]
    pub split_fraction: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_clip")]
    pub clip_norm: f64,
    #[serde(default = "d_dropout")]
    pub dropout_rate: f64,
    #[serde(default = "d_hidden")]
    pub hidden_size: usize,
    #[serde(default = "d_provider")]
    pub provider: ProviderConfig,
    /// Learned embedding table instead of the provider.
    #[serde(default)]
    pub baseline_mode: bool,
    /// Table width in baseline mode.
    #[serde(default = "d_embed_dim")]
    pub embed_dim: usize,
    /// Keeps the baseline table at its initial values.
    #[serde(default)]
    pub freeze_table: bool,
    /// Loss weight of bullying examples; unweighted when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_class_weight: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: d_lr(),
            epochs: d_epochs(),
            split_fraction: d_split(),
            batch_size: d_batch(),
            seed: 0,
            clip_norm: d_clip(),
            dropout_rate: d_dropout(),
            hidden_size: d_hidden(),
            provider: d_provider(),
            baseline_mode: false,
            embed_dim: d_embed_dim(),
            freeze_table: false,
            positive_class_weight: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad("split_fraction must lie strictly between 0 and 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 || self.hidden_size == 0 || self.embed_dim == 0 {
            return bad("batch_size, hidden_size and embed_dim must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if let Some(w) = self.positive_class_weight {
            if !(w > 0.0 && w.is_finite()) {
                return bad("positive_class_weight must be positive");
            }
        }
        if !self.baseline_mode {
            self.provider.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Percentage of training examples classified correctly during the epoch.
    pub train_accuracy: f64,
    pub steps: u64,
    /// Not persisted, so checkpoints stay reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub provider_tag: String,
    pub model_tag: String,
    pub epoch_logs: Vec<EpochLog>,
    pub optimizer_steps: u64,
    pub corpus_provenance: String,
}

/// Binary training target: bullying is the positive class.
pub fn target(label: i8) -> f64 {
    if label == BULLYING {
        1.0
    } else {
        0.0
    }
}

/// Stratified split: each class contributes `round(fraction · n)` records to
/// the training side, clamped so both sides keep at least one.
pub fn split_data(corpus: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus), TrainError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(TrainError::Config("split fraction must lie strictly between 0 and 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = HashSet::new();
    for class in [NOT_BULLYING, BULLYING] {
        let mut ids: Vec<u64> = corpus
            .records
            .iter()
            .filter(|r| r.label == class)
            .map(|r| r.record_id)
            .collect();
        if ids.len() < 2 {
            return Err(TrainError::Stratification(format!(
                "class {class:+} has {} record(s), need at least 2",
                ids.len()
            )));
        }
        let n_train = ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
        ids.shuffle(&mut rng);
        train_ids.extend(ids[..n_train].iter().copied());
    }
    let (train, test): (Vec<CleanRecord>, Vec<CleanRecord>) = corpus
        .records
        .iter()
        .cloned()
        .partition(|r| train_ids.contains(&r.record_id));
    debug_assert_eq!(train.len() + test.len(), corpus.len());
    Ok((corpus.subset(train), corpus.subset(test)))
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn round_to_f32(model: &mut Model) {
    for t in model.tensors_mut() {
        t.iter_mut().for_each(|v| *v = *v as f32 as f64);
    }
}

fn record_tokens(text: &str) -> impl Iterator<Item = &str> {
    tokenize(text)
}

fn baseline_vocab(corpus: &Corpus) -> Vocab {
    let texts: Vec<String> = corpus.records.iter().map(CleanRecord::text).collect();
    Vocab::build(texts.iter().flat_map(|t| record_tokens(t)))
}

pub fn train(config: &TrainConfig, corpus: &Corpus, embedder: Option<&Embedder>) -> Result<Checkpoint, TrainError> {
    train_with_observer(config, corpus, embedder, |_| {})
}

/// Trains on every record of `corpus`, calling `observer` after each epoch.
///
/// Provider mode builds an in-memory embedder from the config when none is given.
pub fn train_with_observer(
    config: &TrainConfig,
    corpus: &Corpus,
    embedder: Option<&Embedder>,
    mut observer: impl FnMut(&EpochLog),
) -> Result<Checkpoint, TrainError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::Config("training corpus is empty".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);

    let (mut model, inputs, provider_tag, model_tag) = if config.baseline_mode {
        let model = Model::init(config.embed_dim, config.hidden_size, &mut init_rng);
        let mut table = EmbeddingTable::init(baseline_vocab(corpus), config.embed_dim, &mut init_rng);
        table.table.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        table.trainable = !config.freeze_table;
        let inputs: Vec<ModelInput> = corpus
            .records
            .iter()
            .map(|r| ModelInput::Tokens(table.indices(record_tokens(&r.text()))))
            .collect();
        (model.with_table(table), inputs, BASELINE_TAG.to_string(), format!("table-d{}", config.embed_dim))
    } else {
        let owned;
        let emb = match embedder {
            Some(e) => e,
            None => {
                owned = Embedder::from_config(&config.provider, None)?;
                &owned
            }
        };
        let map = emb.embed_corpus(corpus)?;
        let inputs: Vec<ModelInput> = corpus
            .records
            .iter()
            .map(|r| ModelInput::from_sequence(&map[&r.record_id]))
            .collect();
        let dim = map.values().next().map(EmbeddingSequence::dim).unwrap();
        let model = Model::init(dim, config.hidden_size, &mut init_rng);
        (model, inputs, emb.provider_tag().to_string(), emb.model_tag().to_string())
    };
    let targets: Vec<f64> = corpus.records.iter().map(|r| target(r.label)).collect();
    let pos_weight = config.positive_class_weight.unwrap_or(1.0);

    let mut state = AdamState::new(&model);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 0x5eed, 1));
    let mut logs = Vec::with_capacity(config.epochs);
    let mut step: u64 = 0;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let model_ref = &model;
            let results: Vec<Result<_, NnError>> = batch
                .par_iter()
                .enumerate()
                .map(|(pos, &i)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, step + 1, pos as u64));
                    let y = targets[i];
                    let w = if y == 1.0 { pos_weight } else { 1.0 };
                    model_ref.loss_and_grad(
                        &inputs[i],
                        y,
                        w,
                        DropoutMode::Train {
                            rate: config.dropout_rate,
                            rng: &mut rng,
                        },
                    )
                })
                .collect();
            let mut grads = Gradients::zeros_like(&model);
            for (r, &i) in results.into_iter().zip(batch) {
                let eg = r?;
                if !eg.loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, step });
                }
                loss_sum += eg.loss;
                if (eg.p > 0.5) == (targets[i] == 1.0) {
                    correct += 1;
                }
                grads.accumulate(&eg.grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            clip_gradients(&mut grads, config.clip_norm);
            adam_step(&mut model, &grads, &mut state, config.lr)?;
            step += 1;
        }
        let mean_loss = loss_sum / inputs.len() as f64;
        if !mean_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, step });
        }
        let log = EpochLog {
            epoch,
            mean_loss,
            train_accuracy: 100.0 * correct as f64 / inputs.len() as f64,
            steps: step,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        observer(&log);
        logs.push(log);
    }

    round_to_f32(&mut model);
    if let Some(k) = model.tensors().iter().position(|t| t.iter().any(|v| !v.is_finite())) {
        return Err(TrainError::NonFiniteWeights {
            tensor: model.tensor_names()[k].clone(),
        });
    }
    Ok(Checkpoint {
        config: config.clone(),
        model,
        provider_tag,
        model_tag,
        epoch_logs: logs,
        optimizer_steps: step,
        corpus_provenance: corpus.provenance.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// `-1` (bullying) iff `p_bully > 0.5`.
    pub label: i8,
    pub p_bully: f64,
}

impl Prediction {
    pub fn from_probability(p_bully: f64) -> Self {
        Self {
            label: if p_bully > 0.5 { BULLYING } else { NOT_BULLYING },
            p_bully,
        }
    }
}

/// A checkpoint paired with the embeddings it was trained on.
pub struct Classifier<'a> {
    ckpt: &'a Checkpoint,
    embedder: Option<&'a Embedder>,
}

impl<'a> Classifier<'a> {
    pub fn new(ckpt: &'a Checkpoint, embedder: Option<&'a Embedder>) -> Result<Self, TrainError> {
        if ckpt.model.table.is_none() {
            let e = embedder.ok_or_else(|| {
                TrainError::Config("checkpoint needs an embedding provider".into())
            })?;
            if e.provider_tag() != ckpt.provider_tag || e.model_tag() != ckpt.model_tag {
                return Err(TrainError::ProviderMismatch {
                    expected: format!("{}/{}", ckpt.provider_tag, ckpt.model_tag),
                    found: format!("{}/{}", e.provider_tag(), e.model_tag()),
                });
            }
        }
        Ok(Self { ckpt, embedder })
    }

    fn input_for(&self, req: EmbedRequest<'_>) -> Result<ModelInput, TrainError> {
        match (&self.ckpt.model.table, self.embedder) {
            (Some(t), _) => {
                let idx = t.indices(record_tokens(req.text));
                if idx.is_empty() {
                    return Err(EmbedError::EmptyText.into());
                }
                Ok(ModelInput::Tokens(idx))
            }
            (None, Some(e)) => Ok(ModelInput::from_sequence(&e.embed_request(req)?)),
            (None, None) => unreachable!("checked in Classifier::new"),
        }
    }

    fn run(&self, input: &ModelInput) -> Result<Prediction, TrainError> {
        Ok(Prediction::from_probability(self.ckpt.model.predict_proba(input)?))
    }

    /// Cleans free text the way the corpus is cleaned, then classifies it.
    pub fn predict(&self, text: &str) -> Result<Prediction, TrainError> {
        let cleaned = clean_post(text);
        self.run(&self.input_for(EmbedRequest {
            record_id: None,
            text: &cleaned,
        })?)
    }

    pub fn predict_record(&self, record: &CleanRecord) -> Result<Prediction, TrainError> {
        let text = record.text();
        self.run(&self.input_for(EmbedRequest {
            record_id: Some(record.record_id),
            text: &text,
        })?)
    }

    /// Predictions for every record, keyed by record id.
    pub fn predict_corpus(&self, corpus: &Corpus) -> Result<BTreeMap<u64, Prediction>, TrainError> {
        let inputs: Vec<ModelInput> = match (&self.ckpt.model.table, self.embedder) {
            (None, Some(e)) => {
                let map = e.embed_corpus(corpus)?;
                corpus
                    .records
                    .iter()
                    .map(|r| ModelInput::from_sequence(&map[&r.record_id]))
                    .collect()
            }
            _ => corpus
                .records
                .iter()
                .map(|r| {
                    self.input_for(EmbedRequest {
                        record_id: Some(r.record_id),
                        text: &r.text(),
                    })
                    .map_err(|e| TrainError::Record {
                        record_id: r.record_id,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<_, _>>()?,
        };
        let preds: Vec<Result<Prediction, TrainError>> = inputs
            .par_iter()
            .zip(&corpus.records)
            .map(|(x, r)| {
                self.run(x).map_err(|e| TrainError::Record {
                    record_id: r.record_id,
                    source: Box::new(e),
                })
            })
            .collect();
        corpus
            .records
            .iter()
            .zip(preds)
            .map(|(r, p)| p.map(|p| (r.record_id, p)))
            .collect()
    }

    pub fn evaluate(&self, test: &Corpus) -> Result<MetricsReport, TrainError> {
        if test.is_empty() {
            return Err(MetricsError::Empty.into());
        }
        let preds = self.predict_corpus(test)?;
        let mut cm = ConfusionMatrix::default();
        for r in &test.records {
            cm.record(r.label, preds[&r.record_id].label)?;
        }
        Ok(MetricsReport::from_confusion(cm)?)
    }
}

pub fn predict(ckpt: &Checkpoint, embedder: Option<&Embedder>, text: &str) -> Result<Prediction, TrainError> {
    Classifier::new(ckpt, embedder)?.predict(text)
}

pub fn evaluate(ckpt: &Checkpoint, embedder: Option<&Embedder>, test: &Corpus) -> Result<MetricsReport, TrainError> {
    Classifier::new(ckpt, embedder)?.evaluate(test)
}
