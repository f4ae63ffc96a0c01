//! Auto-complete search over the decoder models: extent-bounded candidates in
//! either direction, constraint filtering, relevancy rescoring, span
//! bridging and multi-span look-ahead.

mod bridge;
mod constraints;
mod decode;
mod sampling;

pub use bridge::{assemble, bridge_spans, BridgeRequest, DEFAULT_BRIDGE_WINDOW};
pub use constraints::{apply_constraints, insert_into, rejection_reasons, ConstraintSet};
pub use sampling::{sample_from_logits, sample_next_token, SamplingConfig, SamplingStrategy};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Direction, Vocabulary};
use crate::measure::{score_span_relevancy, MeasureError, SpanPair};
use crate::nn::{DecoderLm, EncoderClassifier, NnError};
use decode::{stream_context, Primed, Stop};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no {0:?} decoder loaded")]
    ModelNotLoaded(Direction),
    #[error("context of {len} tokens does not fit the {max}-token window")]
    ContextTooLong { len: usize, max: usize },
    #[error("all {sampled} sampled candidates violated the constraints")]
    InfeasibleConstraints { sampled: usize },
    #[error("the model produced no usable candidate")]
    NoCandidates,
    #[error("no bridge found within the token budget")]
    NoBridgeFound,
    #[error("vocabulary hash mismatch: {0}")]
    VocabHashMismatch(String),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtentLevel {
    Token,
    Word,
    Phrase,
    Span,
    Sentence,
}

impl ExtentLevel {
    pub const ALL: [ExtentLevel; 5] =
        [ExtentLevel::Token, ExtentLevel::Word, ExtentLevel::Phrase, ExtentLevel::Span, ExtentLevel::Sentence];

    pub fn as_str(self) -> &'static str {
        match self {
            ExtentLevel::Token => "token",
            ExtentLevel::Word => "word",
            ExtentLevel::Phrase => "phrase",
            ExtentLevel::Span => "span",
            ExtentLevel::Sentence => "sentence",
        }
    }
}

impl fmt::Display for ExtentLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExtentLevel {
    type Err = GenerateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExtentLevel::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| GenerateError::InvalidRequest(format!("unknown extent {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub context_text: String,
    pub direction: Direction,
    pub extent: ExtentLevel,
    pub k: usize,
    #[serde(default = "one")]
    pub proximity_lookahead: usize,
    #[serde(default)]
    pub constraints: ConstraintSet,
    #[serde(default)]
    pub sampling: SamplingConfig,
    /// Cut over-long contexts on the far side instead of failing.
    #[serde(default = "yes")]
    pub truncate_context: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl GenerationRequest {
    pub fn new(context: impl Into<String>, direction: Direction, extent: ExtentLevel, k: usize) -> Self {
        GenerationRequest {
            context_text: context.into(),
            direction,
            extent,
            k,
            proximity_lookahead: 1,
            constraints: ConstraintSet::default(),
            sampling: SamplingConfig::default(),
            truncate_context: true,
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<(), GenerateError> {
        if self.k == 0 {
            return Err(GenerateError::InvalidRequest("k must be at least 1".into()));
        }
        if self.proximity_lookahead == 0 {
            return Err(GenerateError::InvalidRequest("proximity_lookahead must be at least 1".into()));
        }
        if self.proximity_lookahead > 1 && self.extent != ExtentLevel::Span {
            return Err(GenerateError::InvalidRequest("look-ahead chains are built from span extents".into()));
        }
        self.constraints.validate()?;
        self.sampling.validate(vocab_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub extent: ExtentLevel,
    /// Sum of token log-probabilities under the decoder.
    pub lm_logprob: f64,
    pub n_tokens: usize,
    pub relevancy: Option<f64>,
    pub score: f64,
    /// Empty iff the candidate was accepted.
    pub rejected_reasons: Vec<String>,
}

impl Candidate {
    pub fn accepted(&self) -> bool {
        self.rejected_reasons.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorOptions {
    /// Weight of relevancy in the combined score.
    pub lambda: f64,
    /// Samples drawn per requested candidate.
    pub oversample: usize,
}

impl Default for GeneratorOptions {
    fn default() -> Self {
        GeneratorOptions { lambda: 1.0, oversample: 4 }
    }
}

/// Read-only bundle of everything generation needs; cheap to clone and
/// safe to share across threads.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub vocab: Arc<Vocabulary>,
    pub forward: Option<Arc<DecoderLm>>,
    pub backward: Option<Arc<DecoderLm>>,
    pub relevancy: Option<Arc<EncoderClassifier>>,
    pub options: GeneratorOptions,
}

impl ModelSet {
    pub fn new(vocab: Arc<Vocabulary>) -> Self {
        ModelSet { vocab, forward: None, backward: None, relevancy: None, options: GeneratorOptions::default() }
    }

    pub fn with_forward(mut self, m: DecoderLm) -> Self {
        self.forward = Some(Arc::new(m));
        self
    }

    pub fn with_backward(mut self, m: DecoderLm) -> Self {
        self.backward = Some(Arc::new(m));
        self
    }

    pub fn with_relevancy(mut self, m: EncoderClassifier) -> Self {
        self.relevancy = Some(Arc::new(m));
        self
    }

    pub fn decoder(&self, direction: Direction) -> Result<&DecoderLm, GenerateError> {
        let m = match direction {
            Direction::Forward => self.forward.as_deref(),
            Direction::Backward => self.backward.as_deref(),
        }
        .ok_or(GenerateError::ModelNotLoaded(direction))?;
        if m.vocab_hash() != self.vocab.hash() {
            return Err(GenerateError::VocabHashMismatch(format!(
                "{direction:?} decoder has {}, vocabulary is {}",
                m.vocab_hash(),
                self.vocab.hash()
            )));
        }
        Ok(m)
    }

    /// Every loaded model must share the vocabulary's hash.
    pub fn validate(&self) -> Result<(), GenerateError> {
        for d in [Direction::Forward, Direction::Backward] {
            match self.decoder(d) {
                Ok(_) | Err(GenerateError::ModelNotLoaded(_)) => {}
                Err(e) => return Err(e),
            }
        }
        if let Some(r) = &self.relevancy {
            if r.vocab_hash() != self.vocab.hash() {
                return Err(GenerateError::VocabHashMismatch("relevancy classifier".into()));
            }
        }
        Ok(())
    }
}

/// The span nearest to the insertion point: the text after the last top-level
/// `;` or `:` (forward) or before the first one (backward).
fn adjacent_span(context: &str, direction: Direction) -> &str {
    let t = context.trim();
    let span = match direction {
        Direction::Forward => {
            let body = t.trim_end_matches([';', ':']);
            body.rfind([';', ':']).map_or(body, |i| &body[i + 1..])
        }
        Direction::Backward => t.find([';', ':', '.']).map_or(t, |i| &t[..=i]),
    };
    span.trim()
}

/// Every distinct sample, with constraint verdicts and scores, in score order.
pub fn generate_all(models: &ModelSet, req: &GenerationRequest) -> Result<Vec<Candidate>, GenerateError> {
    req.validate(models.vocab.len())?;
    let model = models.decoder(req.direction)?;
    if req.direction == Direction::Forward && req.extent == ExtentLevel::Span && req.context_text.trim().is_empty() {
        return Err(GenerateError::InvalidRequest("forward span completion needs a context".into()));
    }
    let primed = Primed::new(
        model,
        &models.vocab,
        &stream_context(&req.context_text, req.direction),
        req.sampling.max_tokens,
        req.truncate_context,
    )?;
    let n = match req.sampling.strategy {
        SamplingStrategy::Greedy => 1,
        _ => req.k * models.options.oversample.max(1),
    };
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(req.sampling.seed);
        rng.set_stream(i as u64);
        let Some(piece) = primed.sample(Stop::Extent(req.extent), req.direction, &req.sampling, &mut rng)? else {
            continue;
        };
        let text = piece.text(req.direction);
        if !seen.insert(text.clone()) {
            continue;
        }
        out.push(Candidate {
            rejected_reasons: rejection_reasons(&text, req.extent, &req.constraints, &req.context_text, req.direction),
            text,
            extent: req.extent,
            lm_logprob: piece.logprob,
            n_tokens: piece.tokens,
            relevancy: None,
            score: 0.0,
        });
    }
    let anchor = adjacent_span(&req.context_text, req.direction);
    for c in &mut out {
        if let (Some(clf), true, true) = (&models.relevancy, c.accepted(), !anchor.is_empty()) {
            let pair = match req.direction {
                Direction::Forward => SpanPair::new(anchor, c.text.as_str()),
                Direction::Backward => SpanPair::new(c.text.as_str(), anchor),
            };
            c.relevancy = Some(score_span_relevancy(clf, &models.vocab, &pair)?);
        }
        c.score = c.lm_logprob / c.n_tokens.max(1) as f64 + models.options.lambda * c.relevancy.unwrap_or(0.0);
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.text.cmp(&b.text)));
    Ok(out)
}

/// Top `k` accepted candidates by combined score.
pub fn generate_candidates(models: &ModelSet, req: &GenerationRequest) -> Result<Vec<Candidate>, GenerateError> {
    let all = generate_all(models, req)?;
    if all.is_empty() {
        return Err(GenerateError::NoCandidates);
    }
    let sampled = all.len();
    let mut accepted: Vec<Candidate> = all.into_iter().filter(Candidate::accepted).collect();
    if accepted.is_empty() {
        return Err(GenerateError::InfeasibleConstraints { sampled });
    }
    accepted.truncate(req.k);
    Ok(accepted)
}

/// Backward generation: candidates read correctly placed before the context.
pub fn generate_backward(models: &ModelSet, req: &GenerationRequest) -> Result<Vec<Candidate>, GenerateError> {
    let req = GenerationRequest { direction: Direction::Backward, ..req.clone() };
    generate_candidates(models, &req)
}

/// `m` consecutive best spans, each generated with the previous ones appended
/// to (or, backward, prepended to) the context.
pub fn lookahead_spans(
    models: &ModelSet,
    context: &str,
    direction: Direction,
    m: usize,
    sampling: &SamplingConfig,
    constraints: &ConstraintSet,
) -> Result<Vec<Candidate>, GenerateError> {
    if m == 0 {
        return Err(GenerateError::InvalidRequest("m must be at least 1".into()));
    }
    let mut doc = context.to_string();
    let mut chain = Vec::with_capacity(m);
    for step in 0..m {
        let req = GenerationRequest {
            context_text: doc.clone(),
            direction,
            extent: ExtentLevel::Span,
            k: 1,
            proximity_lookahead: 1,
            constraints: constraints.clone(),
            sampling: SamplingConfig { seed: sampling.seed.wrapping_add(step as u64), ..*sampling },
            truncate_context: true,
        };
        let best = generate_candidates(models, &req)?.remove(0);
        doc = insert_into(&doc, &best.text, direction);
        chain.push(best);
    }
    Ok(chain)
}

/// Entry point used by the service: plain candidates, or for
/// `proximity_lookahead > 1` each of the top `k` spans extended by the next
/// `lookahead - 1` best spans.
pub fn complete(models: &ModelSet, req: &GenerationRequest) -> Result<Vec<Candidate>, GenerateError> {
    let firsts = generate_candidates(models, req)?;
    if req.proximity_lookahead <= 1 {
        return Ok(firsts);
    }
    let mut out = Vec::with_capacity(firsts.len());
    for first in firsts {
        let doc = insert_into(&req.context_text, &first.text, req.direction);
        let rest = lookahead_spans(models, &doc, req.direction, req.proximity_lookahead - 1, &req.sampling, &req.constraints)
            .unwrap_or_default();
        let mut texts: Vec<&str> = std::iter::once(first.text.as_str()).chain(rest.iter().map(|c| c.text.as_str())).collect();
        if req.direction == Direction::Backward {
            texts.reverse();
        }
        let lm_logprob = first.lm_logprob + rest.iter().map(|c| c.lm_logprob).sum::<f64>();
        let n_tokens = first.n_tokens + rest.iter().map(|c| c.n_tokens).sum::<usize>();
        let score = lm_logprob / n_tokens.max(1) as f64 + models.options.lambda * first.relevancy.unwrap_or(0.0);
        out.push(Candidate { text: texts.join(" "), lm_logprob, n_tokens, score, ..first });
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.text.cmp(&b.text)));
    Ok(out)
}

/// `n` free-running samples (ended by EOS or the token budget) after
/// `context`, in reading order. Sample `i` uses RNG stream `stream_base + i`,
/// so the result does not depend on how the work is split across threads.
pub fn sample_texts(
    model: &DecoderLm,
    vocab: &Vocabulary,
    context: &str,
    direction: Direction,
    n: usize,
    sampling: &SamplingConfig,
    stream_base: u64,
) -> Result<Vec<String>, GenerateError> {
    sampling.validate(vocab.len())?;
    if model.vocab_hash() != vocab.hash() {
        return Err(GenerateError::VocabHashMismatch("decoder and vocabulary differ".into()));
    }
    let primed = Primed::new(model, vocab, &stream_context(context, direction), sampling.max_tokens, true)?;
    let one = |i: usize| -> Result<String, GenerateError> {
        let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
        rng.set_stream(stream_base + i as u64);
        Ok(primed.sample(Stop::Budget, direction, sampling, &mut rng)?.map(|p| p.text(direction)).unwrap_or_default())
    };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(n.max(1));
    let chunk = n.div_ceil(workers.max(1)).max(1);
    let parts: Vec<Result<Vec<String>, GenerateError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .step_by(chunk)
            .map(|start| {
                let one = &one;
                scope.spawn(move || (start..(start + chunk).min(n)).map(one).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sampling thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
