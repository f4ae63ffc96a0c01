use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GenerateError;
use crate::dataset::TokenId;
use crate::nn::ops::{log_softmax, softmax};
use crate::nn::DecoderLm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    Greedy,
    TopK,
    Temperature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub strategy: SamplingStrategy,
    pub top_k: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { strategy: SamplingStrategy::TopK, top_k: 40, temperature: 1.0, max_tokens: 48, seed: 0 }
    }
}

impl SamplingConfig {
    pub fn greedy(max_tokens: usize) -> Self {
        SamplingConfig { strategy: SamplingStrategy::Greedy, max_tokens, ..Default::default() }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<(), GenerateError> {
        let bad = |m: String| Err(GenerateError::InvalidRequest(m));
        if self.top_k == 0 || self.top_k > vocab_size {
            return bad(format!("top_k must be in 1..={vocab_size}"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive".into());
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be at least 1".into());
        }
        Ok(())
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn draw(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `u` past the final bucket; take the last non-zero entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Picks the next token. The returned log-probability is always under the
/// model's own distribution (temperature 1, no truncation).
///
/// TopK also applies the temperature before renormalizing; with the default
/// temperature of 1 that is plain top-k.
pub fn sample_from_logits(logits: &[f64], sc: &SamplingConfig, rng: &mut ChaCha8Rng) -> (TokenId, f64) {
    let id = match sc.strategy {
        SamplingStrategy::Greedy => argmax(logits),
        SamplingStrategy::TopK => {
            let mut order: Vec<usize> = (0..logits.len()).collect();
            order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
            order.truncate(sc.top_k.max(1));
            let scaled: Vec<f64> = order.iter().map(|&i| logits[i] / sc.temperature).collect();
            order[draw(&softmax(&scaled), rng)]
        }
        SamplingStrategy::Temperature => {
            let scaled: Vec<f64> = logits.iter().map(|l| l / sc.temperature).collect();
            draw(&softmax(&scaled), rng)
        }
    };
    (id as TokenId, log_softmax(logits)[id])
}

/// One sampling step on a full sequence, seeded from `sc.seed`.
pub fn sample_next_token(model: &DecoderLm, seq: &[TokenId], sc: &SamplingConfig) -> Result<(TokenId, f64), GenerateError> {
    let logits = model.forward(seq)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    Ok(sample_from_logits(logits.last(), sc, &mut rng))
}
