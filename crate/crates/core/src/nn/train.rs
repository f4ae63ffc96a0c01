use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::model::{DecoderLm, EncoderClassifier, LabeledSequence};
use super::NnError;
use crate::dataset::{EncodedDataset, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 3e-3, batch_size: 8, max_steps: 100, adam: AdamConfig::default(), grad_clip: Some(1.0), seed: 0 }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted so that a run can be replayed without moving weights.
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidTrainConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.eps <= 0.0 {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        if matches!(self.grad_clip, Some(c) if c <= 0.0 || !c.is_finite()) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    #[serde(skip)]
    pub m: Vec<f64>,
    #[serde(skip)]
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch loss before each update.
    pub loss_trace: Vec<f64>,
}

/// Batch sampling RNG for one global step.
fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

fn clip(grad: &mut [f64], max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > max {
            let s = max / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
    }
}

fn adam_update(params: &mut [f64], grad: &[f64], state: &mut AdamState, tc: &TrainConfig) {
    let AdamConfig { beta1, beta2, eps } = tc.adam;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= tc.learning_rate * m_hat / (v_hat.sqrt() + eps);
    }
}

fn finish_step(
    params: &mut [f64],
    grad: &mut [f64],
    opt: &mut Option<AdamState>,
    tc: &TrainConfig,
    step: u64,
) -> Result<(), NnError> {
    clip(grad, tc.grad_clip);
    let state = opt.get_or_insert_with(|| AdamState::new(params.len()));
    adam_update(params, grad, state, tc);
    if params.iter().any(|p| !p.is_finite()) {
        return Err(NnError::NonFinite(step));
    }
    Ok(())
}

/// Next-token cross-entropy with Adam. Batches are drawn uniformly with
/// replacement from an RNG keyed on `(tc.seed, global step)`.
pub fn train_lm(model: &mut DecoderLm, dataset: &EncodedDataset, tc: &TrainConfig) -> Result<TrainReport, NnError> {
    tc.validate()?;
    model.check_vocab(&dataset.vocab_hash)?;
    let pool: Vec<&[TokenId]> = dataset.sequences.iter().filter(|s| s.len() >= 2).map(Vec::as_slice).collect();
    if pool.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut report = TrainReport::default();
    let mut grad = vec![0.0; model.params.len()];
    for _ in 0..tc.max_steps {
        let mut rng = step_rng(tc.seed, model.step);
        let batch: Vec<&[TokenId]> = (0..tc.batch_size).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        grad.fill(0.0);
        let loss = model.loss_and_grad(&batch, Some(&mut grad))?;
        if !loss.is_finite() {
            return Err(NnError::NonFinite(model.step));
        }
        report.loss_trace.push(loss);
        finish_step(&mut model.params, &mut grad, &mut model.optimizer, tc, model.step)?;
        model.step += 1;
    }
    model.rng_seed = tc.seed;
    Ok(report)
}

/// Continue training a decoder checkpoint; the step counter and optimizer moments carry over.
pub fn fine_tune(
    checkpoint: &Checkpoint,
    dataset: &EncodedDataset,
    tc: &TrainConfig,
) -> Result<(Checkpoint, TrainReport), NnError> {
    let mut model = checkpoint.decoder()?.clone();
    let report = train_lm(&mut model, dataset, tc)?;
    Ok((Checkpoint::Decoder(model), report))
}

/// Multi-label sigmoid cross-entropy with Adam.
pub fn train_classifier(
    model: &mut EncoderClassifier,
    examples: &[LabeledSequence],
    tc: &TrainConfig,
) -> Result<TrainReport, NnError> {
    tc.validate()?;
    for ex in examples {
        model.check_labels(&ex.labels)?;
    }
    let pool: Vec<&LabeledSequence> = examples.iter().filter(|e| !e.ids.is_empty()).collect();
    if pool.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut report = TrainReport::default();
    let mut grad = vec![0.0; model.params.len()];
    for _ in 0..tc.max_steps {
        let mut rng = step_rng(tc.seed, model.step);
        let batch: Vec<&LabeledSequence> = (0..tc.batch_size).map(|_| pool[rng.random_range(0..pool.len())]).collect();
        grad.fill(0.0);
        let loss = model.loss_and_grad(&batch, Some(&mut grad))?;
        if !loss.is_finite() {
            return Err(NnError::NonFinite(model.step));
        }
        report.loss_trace.push(loss);
        finish_step(&mut model.params, &mut grad, &mut model.optimizer, tc, model.step)?;
        model.step += 1;
    }
    model.rng_seed = tc.seed;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ClassifierMode, ModelConfig};

    fn pattern_dataset(hash: &str) -> EncodedDataset {
        // Five symbols repeating; any window fully determines the next token.
        let seq: Vec<TokenId> = (0..24).map(|i| (i % 5) as TokenId).collect();
        let sequences = (0..5).map(|o| seq[o..o + 17].to_vec()).collect();
        EncodedDataset { vocab_hash: hash.into(), sequences }
    }

    fn small_lm() -> DecoderLm {
        let cfg = ModelConfig { n_layers: 1, n_heads: 2, d_model: 16, d_ff: 32, context_len: 16, vocab_size: 5, seed: 7 };
        DecoderLm::new(cfg, "v").unwrap()
    }

    #[test]
    fn repeating_pattern_is_learned() {
        let mut lm = small_lm();
        let ds = pattern_dataset("v");
        let tc = TrainConfig { learning_rate: 1e-2, batch_size: 4, max_steps: 200, seed: 1, ..Default::default() };
        let report = train_lm(&mut lm, &ds, &tc).unwrap();
        let first = report.loss_trace[0];
        let last = *report.loss_trace.last().unwrap();
        assert!(last < 0.25 * first, "loss {first} -> {last}");
        assert!(lm.params().iter().all(|p| p.is_finite()));
        assert_eq!(lm.step(), 200);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let mut lm = small_lm();
        let before = lm.params().to_vec();
        let tc = TrainConfig { learning_rate: 0.0, max_steps: 5, ..Default::default() };
        train_lm(&mut lm, &pattern_dataset("v"), &tc).unwrap();
        assert_eq!(before, lm.params());
    }

    #[test]
    fn vocab_mismatch_rejected() {
        let mut lm = small_lm();
        let tc = TrainConfig::default();
        assert!(matches!(train_lm(&mut lm, &pattern_dataset("other"), &tc), Err(NnError::VocabMismatch { .. })));
    }

    #[test]
    fn training_is_deterministic() {
        let tc = TrainConfig { max_steps: 10, batch_size: 2, seed: 4, ..Default::default() };
        let ds = pattern_dataset("v");
        let (mut a, mut b) = (small_lm(), small_lm());
        let ra = train_lm(&mut a, &ds, &tc).unwrap();
        let rb = train_lm(&mut b, &ds, &tc).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn split_runs_match_one_run() {
        let ds = pattern_dataset("v");
        let tc = TrainConfig { max_steps: 6, batch_size: 2, seed: 9, ..Default::default() };
        let mut whole = small_lm();
        train_lm(&mut whole, &ds, &tc).unwrap();
        let mut parts = small_lm();
        let half = TrainConfig { max_steps: 3, ..tc.clone() };
        train_lm(&mut parts, &ds, &half).unwrap();
        train_lm(&mut parts, &ds, &half).unwrap();
        assert_eq!(whole.params(), parts.params());
    }

    #[test]
    fn classifier_label_range() {
        let cfg = ModelConfig::tiny(6);
        let mut clf = EncoderClassifier::new(cfg, ClassifierMode::Cpc, "v").unwrap();
        let ex = vec![LabeledSequence { ids: vec![1, 2], labels: vec![9] }];
        let err = train_classifier(&mut clf, &ex, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, NnError::LabelOutOfRange { label: 9, num_labels: 9 }));
    }

    #[test]
    fn identical_labels_collapse() {
        let cfg = ModelConfig::tiny(6).with_seed(2);
        let mut clf = EncoderClassifier::new(cfg, ClassifierMode::Cpc, "v").unwrap();
        let ex: Vec<LabeledSequence> =
            (0..6).map(|i| LabeledSequence { ids: vec![1, (i % 5) as TokenId + 1, 3], labels: vec![0] }).collect();
        let tc = TrainConfig { learning_rate: 2e-2, max_steps: 150, batch_size: 4, ..Default::default() };
        train_classifier(&mut clf, &ex, &tc).unwrap();
        let p = clf.predict(&[1, 4, 5]).unwrap();
        assert!(p[0] > 0.9, "{p:?}");
        assert!(p[1..].iter().all(|&q| q < 0.1), "{p:?}");
    }
}
