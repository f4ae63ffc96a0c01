use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ops::{dot, log_softmax, sigmoid, softplus};
use super::params::{init_params, Layout};
use super::train::AdamState;
use super::transformer::{trunk_backward, trunk_forward, trunk_step, KvCache};
use super::{check_ids, ModelConfig, NnError};
use crate::dataset::TokenId;

/// Row-major positions × vocab logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub positions: usize,
    pub vocab: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.vocab..(t + 1) * self.vocab]
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.positions - 1)
    }
}

/// Causal decoder with the output projection tied to the token embedding.
#[derive(Debug, Clone)]
pub struct DecoderLm {
    pub(crate) config: ModelConfig,
    pub(crate) layout: Arc<Layout>,
    pub(crate) params: Vec<f64>,
    pub(crate) vocab_hash: String,
    pub(crate) step: u64,
    pub(crate) rng_seed: u64,
    pub(crate) optimizer: Option<AdamState>,
}

impl DecoderLm {
    pub fn new(config: ModelConfig, vocab_hash: &str) -> Result<Self, NnError> {
        config.validate()?;
        let layout = Layout::new(&config, None);
        let params = init_params(&layout, config.seed);
        Ok(DecoderLm {
            config,
            layout: Arc::new(layout),
            params,
            vocab_hash: vocab_hash.to_string(),
            step: 0,
            rng_seed: config.seed,
            optimizer: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|t| &self.params[t.range()])
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn check_vocab(&self, hash: &str) -> Result<(), NnError> {
        if self.vocab_hash != hash {
            return Err(NnError::VocabMismatch { model: self.vocab_hash.clone(), data: hash.to_string() });
        }
        Ok(())
    }

    fn project(&self, hidden: &[f64]) -> Vec<f64> {
        let d = self.config.d_model;
        let wte = &self.params[self.layout.wte..self.layout.wte + self.config.vocab_size * d];
        wte.chunks_exact(d).map(|row| dot(hidden, row)).collect()
    }

    pub fn forward(&self, ids: &[TokenId]) -> Result<Logits, NnError> {
        check_ids(&self.config, ids)?;
        let cache = trunk_forward(&self.config, &self.layout, &self.params, ids, true);
        let d = self.config.d_model;
        let data = cache.out.chunks_exact(d).flat_map(|h| self.project(h)).collect();
        Ok(Logits { positions: ids.len(), vocab: self.config.vocab_size, data })
    }

    /// Attention probabilities (T × T, row-major) of one layer and head.
    pub fn attention_probs(&self, ids: &[TokenId], layer: usize, head: usize) -> Result<Vec<f64>, NnError> {
        check_ids(&self.config, ids)?;
        let cache = trunk_forward(&self.config, &self.layout, &self.params, ids, true);
        Ok(cache.attention(layer, head).to_vec())
    }

    pub fn start_decoding(&self) -> KvCache {
        KvCache::new(self.config.n_layers)
    }

    /// Feed one token through the cache and return next-token logits.
    pub fn step_logits(&self, cache: &mut KvCache, id: TokenId) -> Result<Vec<f64>, NnError> {
        if cache.len() >= self.config.context_len {
            return Err(NnError::SequenceTooLong { len: cache.len() + 1, max: self.config.context_len });
        }
        if id as usize >= self.config.vocab_size {
            return Err(NnError::TokenOutOfRange(id));
        }
        let h = trunk_step(&self.config, &self.layout, &self.params, cache, id);
        Ok(self.project(&h))
    }

    /// Mean next-token cross-entropy over every predicted position.
    pub fn loss(&self, seqs: &[Vec<TokenId>]) -> Result<f64, NnError> {
        let refs: Vec<&[TokenId]> = seqs.iter().map(Vec::as_slice).collect();
        self.loss_and_grad(&refs, None)
    }

    fn window<'a>(&self, seq: &'a [TokenId]) -> &'a [TokenId] {
        &seq[..seq.len().min(self.config.context_len + 1)]
    }

    pub(crate) fn loss_and_grad(&self, seqs: &[&[TokenId]], mut grad: Option<&mut [f64]>) -> Result<f64, NnError> {
        let usable: Vec<&[TokenId]> = seqs.iter().map(|s| self.window(s)).filter(|s| s.len() >= 2).collect();
        let total: usize = usable.iter().map(|s| s.len() - 1).sum();
        if total == 0 {
            return Err(NnError::EmptyDataset);
        }
        let d = self.config.d_model;
        let v = self.config.vocab_size;
        let wte_off = self.layout.wte;
        let scale = 1.0 / total as f64;
        let mut loss = 0.0;
        for seq in usable {
            let (input, targets) = (&seq[..seq.len() - 1], &seq[1..]);
            check_ids(&self.config, input)?;
            if let Some(&bad) = targets.iter().find(|&&t| t as usize >= v) {
                return Err(NnError::TokenOutOfRange(bad));
            }
            let cache = trunk_forward(&self.config, &self.layout, &self.params, input, true);
            let mut d_out = grad.as_ref().map(|_| vec![0.0; input.len() * d]);
            for (t, &target) in targets.iter().enumerate() {
                let h = &cache.out[t * d..(t + 1) * d];
                let logp = log_softmax(&self.project(h));
                loss -= logp[target as usize] * scale;
                if let (Some(g), Some(d_out)) = (grad.as_deref_mut(), d_out.as_mut()) {
                    let d_h = &mut d_out[t * d..(t + 1) * d];
                    for (tok, &lp) in logp.iter().enumerate() {
                        let mut dl = lp.exp();
                        if tok == target as usize {
                            dl -= 1.0;
                        }
                        dl *= scale;
                        if dl == 0.0 {
                            continue;
                        }
                        let row = wte_off + tok * d;
                        for i in 0..d {
                            d_h[i] += dl * self.params[row + i];
                            g[row + i] += dl * h[i];
                        }
                    }
                }
            }
            if let (Some(g), Some(d_out)) = (grad.as_deref_mut(), d_out) {
                trunk_backward(&self.config, &self.layout, &self.params, &cache, &d_out, g, true);
            }
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    /// Nine CPC sections, A through H plus Y.
    Cpc,
    /// Two labels: unrelated (0) and relevant (1).
    Relevancy,
}

impl ClassifierMode {
    pub fn num_labels(self) -> usize {
        match self {
            ClassifierMode::Cpc => 9,
            ClassifierMode::Relevancy => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSequence {
    pub ids: Vec<TokenId>,
    pub labels: Vec<usize>,
}

/// Bidirectional encoder, mean-pooled, with independent sigmoid outputs.
#[derive(Debug, Clone)]
pub struct EncoderClassifier {
    pub(crate) config: ModelConfig,
    pub(crate) mode: ClassifierMode,
    pub(crate) layout: Arc<Layout>,
    pub(crate) params: Vec<f64>,
    pub(crate) vocab_hash: String,
    pub(crate) step: u64,
    pub(crate) rng_seed: u64,
    pub(crate) optimizer: Option<AdamState>,
}

impl EncoderClassifier {
    pub fn new(config: ModelConfig, mode: ClassifierMode, vocab_hash: &str) -> Result<Self, NnError> {
        config.validate()?;
        let layout = Layout::new(&config, Some(mode.num_labels()));
        let params = init_params(&layout, config.seed);
        Ok(EncoderClassifier {
            config,
            mode,
            layout: Arc::new(layout),
            params,
            vocab_hash: vocab_hash.to_string(),
            step: 0,
            rng_seed: config.seed,
            optimizer: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> ClassifierMode {
        self.mode
    }

    pub fn num_labels(&self) -> usize {
        self.mode.num_labels()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn check_vocab(&self, hash: &str) -> Result<(), NnError> {
        if self.vocab_hash != hash {
            return Err(NnError::VocabMismatch { model: self.vocab_hash.clone(), data: hash.to_string() });
        }
        Ok(())
    }

    /// Sequences longer than the context keep their first `context_len` tokens.
    fn clip<'a>(&self, ids: &'a [TokenId]) -> &'a [TokenId] {
        &ids[..ids.len().min(self.config.context_len)]
    }

    fn head_logits(&self, pooled: &[f64]) -> Vec<f64> {
        let l = self.num_labels();
        let d = self.config.d_model;
        let w = self.layout.head_w.expect("classifier head");
        let b = self.layout.head_b.expect("classifier head");
        (0..l)
            .map(|j| self.params[b + j] + (0..d).map(|i| pooled[i] * self.params[w + i * l + j]).sum::<f64>())
            .collect()
    }

    fn pooled(&self, ids: &[TokenId]) -> (super::transformer::TrunkCache, Vec<f64>) {
        let d = self.config.d_model;
        let cache = trunk_forward(&self.config, &self.layout, &self.params, ids, false);
        let mut pooled = vec![0.0; d];
        for row in cache.out.chunks_exact(d) {
            for (p, v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        let n = ids.len() as f64;
        pooled.iter_mut().for_each(|p| *p /= n);
        (cache, pooled)
    }

    /// Per-label probabilities in [0, 1].
    pub fn predict(&self, ids: &[TokenId]) -> Result<Vec<f64>, NnError> {
        let ids = self.clip(ids);
        check_ids(&self.config, ids)?;
        let (_, pooled) = self.pooled(ids);
        Ok(self.head_logits(&pooled).into_iter().map(sigmoid).collect())
    }

    pub fn check_labels(&self, labels: &[usize]) -> Result<(), NnError> {
        let n = self.num_labels();
        match labels.iter().find(|&&l| l >= n) {
            Some(&label) => Err(NnError::LabelOutOfRange { label, num_labels: n }),
            None => Ok(()),
        }
    }

    /// Mean binary cross-entropy over labels and examples.
    pub fn loss(&self, batch: &[LabeledSequence]) -> Result<f64, NnError> {
        let refs: Vec<&LabeledSequence> = batch.iter().collect();
        self.loss_and_grad(&refs, None)
    }

    pub(crate) fn loss_and_grad(&self, batch: &[&LabeledSequence], mut grad: Option<&mut [f64]>) -> Result<f64, NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyDataset);
        }
        let l = self.num_labels();
        let d = self.config.d_model;
        let w = self.layout.head_w.expect("classifier head");
        let b = self.layout.head_b.expect("classifier head");
        let scale = 1.0 / (l * batch.len()) as f64;
        let mut loss = 0.0;
        for ex in batch {
            self.check_labels(&ex.labels)?;
            let ids = self.clip(&ex.ids);
            check_ids(&self.config, ids)?;
            let (cache, pooled) = self.pooled(ids);
            let z = self.head_logits(&pooled);
            let mut dz = vec![0.0; l];
            for j in 0..l {
                let y = if ex.labels.contains(&j) { 1.0 } else { 0.0 };
                loss += (softplus(z[j]) - y * z[j]) * scale;
                dz[j] = (sigmoid(z[j]) - y) * scale;
            }
            let Some(g) = grad.as_deref_mut() else { continue };
            let mut d_pooled = vec![0.0; d];
            for i in 0..d {
                for j in 0..l {
                    g[w + i * l + j] += pooled[i] * dz[j];
                    d_pooled[i] += self.params[w + i * l + j] * dz[j];
                }
            }
            for j in 0..l {
                g[b + j] += dz[j];
            }
            let n = ids.len();
            let row: Vec<f64> = d_pooled.iter().map(|v| v / n as f64).collect();
            let d_out: Vec<f64> = row.iter().copied().cycle().take(n * d).collect();
            trunk_backward(&self.config, &self.layout, &self.params, &cache, &d_out, g, false);
        }
        Ok(loss)
    }
}
