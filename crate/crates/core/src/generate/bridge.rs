use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decode::{stream_context, Primed, Stop, Word};
use super::{Candidate, ExtentLevel, GenerateError, ModelSet, SamplingConfig, SamplingStrategy};
use crate::dataset::Direction;

pub const DEFAULT_BRIDGE_WINDOW: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub left: String,
    pub right: String,
    pub max_bridge_tokens: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub sampling: SamplingConfig,
}

fn default_k() -> usize {
    5
}

fn default_window() -> usize {
    DEFAULT_BRIDGE_WINDOW
}

/// `left bridge right`, single-spaced.
pub fn assemble(left: &str, bridge: &str, right: &str) -> String {
    [left.trim(), bridge.trim(), right.trim()].iter().filter(|s| !s.is_empty()).copied().collect::<Vec<_>>().join(" ")
}

struct Sample {
    words: Vec<Word>,
}

fn samples(
    models: &ModelSet,
    direction: Direction,
    context: &str,
    n: usize,
    budget: usize,
    sc: &SamplingConfig,
) -> Result<Vec<Sample>, GenerateError> {
    let model = models.decoder(direction)?;
    let primed = Primed::new(model, &models.vocab, &stream_context(context, direction), budget, true)?;
    let sc = SamplingConfig { max_tokens: budget, ..*sc };
    let mut out = Vec::new();
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        rng.set_stream(i as u64 + if direction == Direction::Backward { 1 << 32 } else { 0 });
        if let Some(piece) = primed.sample(Stop::Budget, direction, &sc, &mut rng)? {
            let mut words = piece.words;
            if direction == Direction::Backward {
                words.reverse();
            }
            out.push(Sample { words });
        }
    }
    Ok(out)
}

/// Joins `left` and `right` by meeting a forward continuation of `left` and a
/// backward predecessor of `right` on a shared window of `window` words.
///
/// With `F' = tail(left) + F` and `B' = B + head(right)`, a match
/// `F'[i..i+W] == B'[j..j+W]` must reach past the left tail and start no later
/// than the right head. The bridge is the forward words up to the end of the
/// window followed by the backward words after it; matches that would make
/// left and right overlap are rejected.
pub fn bridge_spans(models: &ModelSet, req: &BridgeRequest) -> Result<Vec<Candidate>, GenerateError> {
    if req.left.trim().is_empty() || req.right.trim().is_empty() {
        return Err(GenerateError::InvalidRequest("bridge needs non-empty left and right text".into()));
    }
    if req.k == 0 || req.window == 0 {
        return Err(GenerateError::InvalidRequest("k and window must be at least 1".into()));
    }
    models.decoder(Direction::Forward)?;
    models.decoder(Direction::Backward)?;
    req.sampling.validate(models.vocab.len())?;
    let w = req.window;
    let n = match req.sampling.strategy {
        SamplingStrategy::Greedy => 1,
        _ => req.k * models.options.oversample,
    };
    let (fwd, bwd) = if req.max_bridge_tokens == 0 {
        (vec![Sample { words: Vec::new() }], vec![Sample { words: Vec::new() }])
    } else {
        (
            samples(models, Direction::Forward, &req.left, n, req.max_bridge_tokens, &req.sampling)?,
            samples(models, Direction::Backward, &req.right, n, req.max_bridge_tokens, &req.sampling)?,
        )
    };
    let left_words: Vec<&str> = req.left.split_whitespace().collect();
    let right_words: Vec<&str> = req.right.split_whitespace().collect();
    let tail = &left_words[left_words.len().saturating_sub(w)..];
    let head = &right_words[..right_words.len().min(w)];
    let tl = tail.len();

    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for f in &fwd {
        let fp: Vec<&str> = tail.iter().copied().chain(f.words.iter().map(|x| x.text.as_str())).collect();
        for b in &bwd {
            let bp: Vec<&str> = b.words.iter().map(|x| x.text.as_str()).chain(head.iter().copied()).collect();
            let nb = b.words.len();
            if fp.len() < w || bp.len() < w {
                continue;
            }
            for i in 0..=fp.len() - w {
                if i + w < tl {
                    continue;
                }
                for j in 0..=(bp.len() - w).min(nb) {
                    if fp[i..i + w] != bp[j..j + w] {
                        continue;
                    }
                    let over = (j + w).saturating_sub(nb);
                    let Some(n_fwd) = (i + w).checked_sub(tl + over) else { continue };
                    let fwd_part = &f.words[..n_fwd];
                    let bwd_part = if over > 0 { &b.words[nb..] } else { &b.words[j + w..] };
                    let text = fwd_part.iter().chain(bwd_part).map(|x| x.text.as_str()).collect::<Vec<_>>().join(" ");
                    if !seen.insert(text.clone()) {
                        continue;
                    }
                    let lm_logprob: f64 = fwd_part.iter().chain(bwd_part).map(|x| x.logprob).sum();
                    let n_tokens = fwd_part.iter().chain(bwd_part).map(|x| x.tokens).sum();
                    out.push(Candidate {
                        text,
                        extent: ExtentLevel::Span,
                        lm_logprob,
                        n_tokens,
                        relevancy: None,
                        score: lm_logprob,
                        rejected_reasons: Vec::new(),
                    });
                }
            }
        }
    }
    if out.is_empty() {
        return Err(GenerateError::NoBridgeFound);
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.text.cmp(&b.text)));
    out.truncate(req.k);
    Ok(out)
}
