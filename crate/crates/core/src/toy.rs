//! Desk-scale helpers that wire the pipeline together: texts to records,
//! records to encoded datasets, and short training runs.

use crate::dataset::{encode_records, with_direction, Direction, RecordFormat, TrainingRecord, Vocabulary};
use crate::nn::{train_lm, DecoderLm, ModelConfig, NnError, TrainConfig, TrainReport};

/// Small decoder shape used throughout the tests and the acceptance suite.
pub fn desk_config(vocab_size: usize, seed: u64) -> ModelConfig {
    ModelConfig { n_layers: 2, n_heads: 2, d_model: 32, d_ff: 64, context_len: 64, vocab_size, seed }
}

/// Forward records for loose texts, one pseudo-patent per text.
pub fn records_from_texts<S: AsRef<str>>(texts: &[S]) -> Vec<TrainingRecord> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| TrainingRecord {
            text: t.as_ref().to_string(),
            patent_id: format!("T{i}"),
            claim_number: 1,
            format: RecordFormat::DependentAlone,
            direction: Direction::Forward,
        })
        .collect()
}

/// Trains a fresh decoder on `records` read in `direction`.
pub fn train_decoder(
    records: &[TrainingRecord],
    vocab: &Vocabulary,
    direction: Direction,
    config: ModelConfig,
    tc: &TrainConfig,
) -> Result<(DecoderLm, TrainReport), NnError> {
    let data = encode_records(&with_direction(records, direction), vocab, config.context_len);
    let mut model = DecoderLm::new(config, vocab.hash())?;
    let report = train_lm(&mut model, &data, tc)?;
    Ok((model, report))
}
