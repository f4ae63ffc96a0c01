//! Token-by-token decoding with extent-aware stopping.

use rand_chacha::ChaCha8Rng;

use super::sampling::{sample_from_logits, SamplingConfig};
use super::{ExtentLevel, GenerateError};
use crate::dataset::{reverse_words, Direction, TokenId, Vocabulary, BOS_ID, EOS_ID, PAD_ID, SEP_ID};
use crate::nn::{DecoderLm, KvCache};

/// A decoder primed with a context, ready to branch into many samples.
pub(crate) struct Primed<'a> {
    pub model: &'a DecoderLm,
    pub vocab: &'a Vocabulary,
    cache: KvCache,
    logits: Vec<f64>,
}

/// The text the model actually conditions on: forward context as written,
/// backward context word-reversed.
pub(crate) fn stream_context(context: &str, direction: Direction) -> String {
    match direction {
        Direction::Forward => context.trim_end().to_string(),
        Direction::Backward => reverse_words(context),
    }
}

impl<'a> Primed<'a> {
    /// Feeds `BOS + context`. Contexts that leave fewer than `reserve` free
    /// positions are cut from the left (the far side of the insertion point)
    /// when `truncate` is set, and rejected otherwise.
    pub fn new(
        model: &'a DecoderLm,
        vocab: &'a Vocabulary,
        stream_text: &str,
        reserve: usize,
        truncate: bool,
    ) -> Result<Self, GenerateError> {
        let c = model.config().context_len;
        let mut ids = vocab.encode(stream_text);
        let room = c.saturating_sub(1 + reserve.min(c / 2)).max(1);
        if ids.len() > room {
            if !truncate {
                return Err(GenerateError::ContextTooLong { len: ids.len() + 1, max: c - reserve.min(c / 2) });
            }
            ids.drain(..ids.len() - room);
        }
        let mut cache = model.start_decoding();
        let mut logits = model.step_logits(&mut cache, BOS_ID)?;
        for &id in &ids {
            logits = model.step_logits(&mut cache, id)?;
        }
        Ok(Primed { model, vocab, cache, logits })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Word {
    pub text: String,
    pub logprob: f64,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Piece {
    /// Words in stream order (reversed reading order for backward streams).
    pub words: Vec<Word>,
    pub token_text: Option<String>,
    pub logprob: f64,
    pub tokens: usize,
}

impl Piece {
    /// Text in reading order.
    pub fn text(&self, direction: Direction) -> String {
        if let Some(t) = &self.token_text {
            return t.clone();
        }
        let mut words: Vec<&str> = self.words.iter().map(|w| w.text.as_str()).collect();
        if direction == Direction::Backward {
            words.reverse();
        }
        words.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stop {
    Extent(ExtentLevel),
    /// Only the token budget (or EOS) ends the sample.
    Budget,
}

enum Cut {
    Continue,
    After,
    Before,
}

fn ends_with_any(w: &str, set: &[char]) -> bool {
    w.chars().last().is_some_and(|c| set.contains(&c))
}

fn depth_delta(w: &str) -> i32 {
    w.chars()
        .map(|c| match c {
            '(' | '[' | '{' => 1,
            ')' | ']' | '}' => -1,
            _ => 0,
        })
        .sum()
}

const PHRASE_WORDS: usize = 8;

/// Decides what happens once word `n` (0-based, stream order) is complete.
fn cut_rule(stop: Stop, direction: Direction, n: usize, word: &str, depth: i32) -> Cut {
    let Stop::Extent(extent) = stop else { return Cut::Continue };
    let top = depth <= 0;
    match (direction, extent) {
        (_, ExtentLevel::Token) => Cut::After,
        (_, ExtentLevel::Word) => Cut::After,
        (Direction::Forward, ExtentLevel::Phrase) => {
            if ends_with_any(word, &[',', ';', ':', '.']) || n + 1 >= PHRASE_WORDS {
                Cut::After
            } else {
                Cut::Continue
            }
        }
        (Direction::Forward, ExtentLevel::Span) => {
            if top && ends_with_any(word, &[';', ':', '.']) {
                Cut::After
            } else {
                Cut::Continue
            }
        }
        (Direction::Forward, ExtentLevel::Sentence) => {
            if top && ends_with_any(word, &['.']) {
                Cut::After
            } else {
                Cut::Continue
            }
        }
        // Backward: a word carrying a delimiter belongs to the unit before the
        // one being built, except for the first word, which closes it.
        (Direction::Backward, ExtentLevel::Phrase) => {
            if n > 0 && ends_with_any(word, &[',', ';', ':', '.']) {
                Cut::Before
            } else if n + 1 >= PHRASE_WORDS {
                Cut::After
            } else {
                Cut::Continue
            }
        }
        (Direction::Backward, ExtentLevel::Span) => {
            if n > 0 && ends_with_any(word, &[';', ':', '.']) {
                Cut::Before
            } else {
                Cut::Continue
            }
        }
        (Direction::Backward, ExtentLevel::Sentence) => {
            if n > 0 && ends_with_any(word, &['.']) {
                Cut::Before
            } else {
                Cut::Continue
            }
        }
    }
}

fn is_control(id: TokenId) -> bool {
    matches!(id, BOS_ID | EOS_ID | PAD_ID | SEP_ID)
}

impl Primed<'_> {
    /// Draws one sample. `None` when nothing but whitespace or a control
    /// token was produced.
    pub fn sample(
        &self,
        stop: Stop,
        direction: Direction,
        sc: &SamplingConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Piece>, GenerateError> {
        let context_len = self.model.config().context_len;
        let mut cache = self.cache.clone();
        let mut logits = self.logits.clone();
        let mut words: Vec<Word> = Vec::new();
        let mut open = false;
        let mut depth = 0;
        let mut first: Option<(String, f64)> = None;
        let mut budget = sc.max_tokens;

        // Returns Some(kept word count) when the sample should stop.
        let complete = |words: &Vec<Word>, depth: &mut i32| -> Option<usize> {
            let n = words.len() - 1;
            let w = &words[n].text;
            *depth += depth_delta(w);
            match cut_rule(stop, direction, n, w, *depth) {
                Cut::Continue => None,
                Cut::After => Some(n + 1),
                Cut::Before => Some(n),
            }
        };

        loop {
            if budget == 0 {
                break;
            }
            let (id, lp) = sample_from_logits(&logits, sc, rng);
            if is_control(id) {
                break;
            }
            budget -= 1;
            let text = self.vocab.decode(&[id]).map_err(|e| GenerateError::InvalidRequest(e.to_string()))?;
            if stop == Stop::Extent(ExtentLevel::Token) {
                let t = text.trim_start().to_string();
                if t.is_empty() {
                    return Ok(None);
                }
                first = Some((t, lp));
                break;
            }
            let starts_ws = text.starts_with(char::is_whitespace);
            let body = text.trim_start();
            if starts_ws && open {
                open = false;
                if let Some(keep) = complete(&words, &mut depth) {
                    words.truncate(keep);
                    return Ok(finish(words, None));
                }
            }
            if !body.is_empty() {
                if open {
                    let w = words.last_mut().expect("open word");
                    w.text.push_str(body);
                    w.logprob += lp;
                    w.tokens += 1;
                } else {
                    words.push(Word { text: body.to_string(), logprob: lp, tokens: 1 });
                    open = true;
                }
            } else if let Some(w) = words.last_mut() {
                // Pure whitespace: charge it to the word it closes.
                w.logprob += lp;
                w.tokens += 1;
            }
            if cache.len() >= context_len {
                break;
            }
            logits = self.model.step_logits(&mut cache, id)?;
        }
        if let Some((t, lp)) = first {
            return Ok(Some(Piece { words: Vec::new(), token_text: Some(t), logprob: lp, tokens: 1 }));
        }
        if open {
            if let Some(keep) = complete(&words, &mut depth) {
                words.truncate(keep);
            }
        }
        Ok(finish(words, None))
    }
}

fn finish(words: Vec<Word>, token_text: Option<String>) -> Option<Piece> {
    if words.is_empty() {
        return None;
    }
    let logprob = words.iter().map(|w| w.logprob).sum();
    let tokens = words.iter().map(|w| w.tokens).sum();
    Some(Piece { words, token_text, logprob, tokens })
}
