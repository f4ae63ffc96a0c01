//! From-scratch toy transformers: a causal decoder LM for generation and a
//! mean-pooled encoder classifier for measurement. Everything runs in f64 on
//! the CPU with hand-written backpropagation.

mod checkpoint;
mod gradcheck;
mod model;
pub mod ops;
mod params;
mod train;
mod transformer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport, GRADCHECK_STEP};
pub use model::{ClassifierMode, DecoderLm, EncoderClassifier, LabeledSequence, Logits};
pub use params::{Layout, TensorSpec, INIT_STD};
pub use train::{fine_tune, train_classifier, train_lm, AdamConfig, AdamState, TrainConfig, TrainReport};
pub use transformer::KvCache;

use crate::dataset::TokenId;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid training config: {0}")]
    InvalidTrainConfig(String),
    #[error("empty token sequence")]
    EmptySequence,
    #[error("sequence of {len} tokens exceeds context length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {0} outside the model vocabulary")]
    TokenOutOfRange(TokenId),
    #[error("vocabulary hash mismatch: model {model}, data {data}")]
    VocabMismatch { model: String, data: String },
    #[error("label {label} out of range for {num_labels} labels")]
    LabelOutOfRange { label: usize, num_labels: usize },
    #[error("no usable training sequences")]
    EmptyDataset,
    #[error("checkpoint schema version {found}, expected {expected}")]
    SchemaVersionMismatch { found: u32, expected: u32 },
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("checkpoint holds a {found} model, expected {expected}")]
    WrongModelKind { found: &'static str, expected: &'static str },
    #[error("non-finite value produced during training at step {0}")]
    NonFinite(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Default toy shape: 2 layers, 2 heads, d_model 64, context 128.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig { n_layers: 2, n_heads: 2, d_model: 64, d_ff: 256, context_len: 128, vocab_size, seed: 0 }
    }

    /// Shape small enough for finite-difference checks.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig { n_layers: 1, n_heads: 2, d_model: 8, d_ff: 16, context_len: 8, vocab_size, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.n_layers < 1 {
            return bad("n_layers must be at least 1");
        }
        if self.n_heads < 1 {
            return bad("n_heads must be at least 1");
        }
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(NnError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ff == 0 {
            return bad("d_ff must be positive");
        }
        if self.context_len < 2 {
            return bad("context_len must be at least 2");
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Decoder,
    Classifier,
}

/// Either model, as produced by [`init_model`].
#[derive(Debug, Clone)]
pub enum Model {
    Decoder(DecoderLm),
    Classifier(EncoderClassifier),
}

/// `mode == None` builds the decoder; `Some(mode)` the classifier.
pub fn init_model(config: ModelConfig, mode: Option<ClassifierMode>, vocab_hash: &str) -> Result<Model, NnError> {
    Ok(match mode {
        None => Model::Decoder(DecoderLm::new(config, vocab_hash)?),
        Some(m) => Model::Classifier(EncoderClassifier::new(config, m, vocab_hash)?),
    })
}

pub(crate) fn check_ids(config: &ModelConfig, ids: &[TokenId]) -> Result<(), NnError> {
    if ids.is_empty() {
        return Err(NnError::EmptySequence);
    }
    if ids.len() > config.context_len {
        return Err(NnError::SequenceTooLong { len: ids.len(), max: config.context_len });
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(NnError::TokenOutOfRange(bad));
    }
    Ok(())
}
