//! Byte-pair encoding with byte fallback.
//!
//! Token ids are laid out as: the four special tokens, 256 byte tokens, the
//! characters seen during training (sorted), then one token per merge in
//! training order. Characters outside the trained alphabet are encoded as
//! their UTF-8 bytes, so every string round-trips.
//!
//! Text is pre-split into chunks (a word or punctuation run, optionally with
//! one leading space, or a whitespace run); merges never cross chunks.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DatasetError;

pub type TokenId = u32;

pub const VOCAB_VERSION: u32 = 1;
const BYTE_TOKENS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub bos: String,
    pub eos: String,
    pub sep: String,
    pub pad: String,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self {
            bos: "<|start|>".into(),
            eos: "<|end|>".into(),
            sep: "<|dep|>".into(),
            pad: "<|pad|>".into(),
        }
    }
}

impl SpecialTokens {
    fn in_id_order(&self) -> [&str; 4] {
        [&self.pad, &self.bos, &self.eos, &self.sep]
    }
}

pub const PAD_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
pub const SEP_ID: TokenId = 3;

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    merges: Vec<(String, String)>,
    special: SpecialTokens,
    version: u32,
}

/// A trained BPE vocabulary.
#[derive(Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    merges: Vec<(String, String)>,
    special: SpecialTokens,
    alphabet_len: usize,
    char_ids: HashMap<char, TokenId>,
    /// (left, right) → (rank, merged id)
    ranks: HashMap<(TokenId, TokenId), (usize, TokenId)>,
    hash: String,
    cache: Mutex<HashMap<String, Vec<TokenId>>>,
}

impl Clone for Vocabulary {
    fn clone(&self) -> Self {
        Self {
            tokens: self.tokens.clone(),
            merges: self.merges.clone(),
            special: self.special.clone(),
            alphabet_len: self.alphabet_len,
            char_ids: self.char_ids.clone(),
            ranks: self.ranks.clone(),
            hash: self.hash.clone(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.merges == other.merges && self.special == other.special
    }
}

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

fn is_special_layout(tokens: &[String], special: &SpecialTokens) -> bool {
    tokens.len() >= 4 + BYTE_TOKENS
        && special
            .in_id_order()
            .iter()
            .zip(tokens)
            .all(|(s, t)| *s == t.as_str())
        && (0..BYTE_TOKENS).all(|b| tokens[4 + b] == byte_token(b as u8))
}

impl Vocabulary {
    fn assemble(
        tokens: Vec<String>,
        merges: Vec<(String, String)>,
        special: SpecialTokens,
    ) -> Result<Self, DatasetError> {
        if !is_special_layout(&tokens, &special) {
            return Err(DatasetError::BadVocabulary("unexpected special/byte token layout".into()));
        }
        let base = 4 + BYTE_TOKENS;
        if merges.len() > tokens.len() - base {
            return Err(DatasetError::BadVocabulary("more merges than tokens".into()));
        }
        let alphabet_len = tokens.len() - base - merges.len();
        let mut char_ids = HashMap::new();
        for (i, tok) in tokens[base..base + alphabet_len].iter().enumerate() {
            let mut chars = tok.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => {
                    char_ids.insert(c, (base + i) as TokenId);
                }
                _ => return Err(DatasetError::BadVocabulary(format!("alphabet entry {tok:?}"))),
            }
        }

        // Replay merges: each must concatenate two earlier tokens, in order.
        let mut by_string: HashMap<&str, TokenId> = HashMap::new();
        for (id, tok) in tokens.iter().enumerate().skip(base).take(alphabet_len) {
            by_string.insert(tok.as_str(), id as TokenId);
        }
        let mut ranks = HashMap::new();
        for (rank, (left, right)) in merges.iter().enumerate() {
            let merged_id = (base + alphabet_len + rank) as TokenId;
            let merged = &tokens[merged_id as usize];
            if *merged != format!("{left}{right}") {
                return Err(DatasetError::BadVocabulary(format!(
                    "merge {rank} ({left:?}, {right:?}) does not produce token {merged:?}"
                )));
            }
            let (Some(&l), Some(&r)) = (by_string.get(left.as_str()), by_string.get(right.as_str())) else {
                return Err(DatasetError::BadVocabulary(format!("merge {rank} uses unknown tokens")));
            };
            ranks.entry((l, r)).or_insert((rank, merged_id));
            by_string.entry(merged.as_str()).or_insert(merged_id);
        }

        let file = VocabFile {
            tokens: tokens.clone(),
            merges: merges.clone(),
            special: special.clone(),
            version: VOCAB_VERSION,
        };
        let json = serde_json::to_vec(&file).expect("vocabulary serializes");
        let hash = hex::encode(Sha256::digest(&json));

        Ok(Self {
            tokens,
            merges,
            special,
            alphabet_len,
            char_ids,
            ranks,
            hash,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Trains a vocabulary of at most `target_size` tokens (specials and byte
    /// tokens included). Merging stops early when no pair occurs twice.
    /// Ties on pair frequency go to the lexicographically smallest pair.
    pub fn train<S: AsRef<str>>(texts: &[S], target_size: usize) -> Result<Self, DatasetError> {
        let special = SpecialTokens::default();
        let mut chunk_counts: HashMap<&str, u64> = HashMap::new();
        for text in texts {
            for piece in split_specials(text.as_ref(), &special) {
                if let Piece::Text(t) = piece {
                    for chunk in chunks(t) {
                        *chunk_counts.entry(chunk).or_default() += 1;
                    }
                }
            }
        }
        if chunk_counts.is_empty() {
            return Err(DatasetError::EmptyCorpus);
        }

        let alphabet: BTreeSet<char> = chunk_counts.keys().flat_map(|c| c.chars()).collect();
        let mut tokens: Vec<String> = special.in_id_order().iter().map(|s| s.to_string()).collect();
        tokens.extend((0..=255u8).map(byte_token));
        let base = tokens.len();
        tokens.extend(alphabet.iter().map(|c| c.to_string()));
        let char_id: HashMap<char, TokenId> = alphabet
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, (base + i) as TokenId))
            .collect();

        // Sorted for a deterministic word order.
        let mut sorted_chunks: Vec<(&str, u64)> = chunk_counts.into_iter().collect();
        sorted_chunks.sort_unstable();
        let mut words: Vec<(Vec<TokenId>, u64)> = sorted_chunks
            .into_iter()
            .map(|(chunk, n)| (chunk.chars().map(|c| char_id[&c]).collect(), n))
            .collect();

        let mut merges = Vec::new();
        while tokens.len() < target_size {
            let mut counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
            for (syms, n) in &words {
                for pair in syms.windows(2) {
                    *counts.entry((pair[0], pair[1])).or_default() += n;
                }
            }
            let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    // smaller strings win ties, so compare reversed
                    let sa = (&tokens[pa.0 as usize], &tokens[pa.1 as usize]);
                    let sb = (&tokens[pb.0 as usize], &tokens[pb.1 as usize]);
                    sb.cmp(&sa)
                })
            });
            let Some(((left, right), count)) = best else { break };
            if count < 2 {
                break;
            }
            let new_id = tokens.len() as TokenId;
            let (ls, rs) = (tokens[left as usize].clone(), tokens[right as usize].clone());
            tokens.push(format!("{ls}{rs}"));
            merges.push((ls, rs));
            for (syms, _) in &mut words {
                merge_pair(syms, left, right, new_id);
            }
        }

        Self::assemble(tokens, merges, special)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn special(&self) -> &SpecialTokens {
        &self.special
    }

    /// Number of tokens before any merge: specials, bytes and alphabet.
    pub fn base_len(&self) -> usize {
        4 + BYTE_TOKENS + self.alphabet_len
    }

    /// SHA-256 of the serialized vocabulary, hex encoded.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            tokens: self.tokens.clone(),
            merges: self.merges.clone(),
            special: self.special.clone(),
            version: VOCAB_VERSION,
        };
        serde_json::to_string(&file).expect("vocabulary serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self, DatasetError> {
        let file: VocabFile =
            serde_json::from_str(raw).map_err(|e| DatasetError::BadVocabulary(e.to_string()))?;
        if file.version != VOCAB_VERSION {
            return Err(DatasetError::BadVocabulary(format!(
                "vocabulary version {} (expected {VOCAB_VERSION})",
                file.version
            )));
        }
        Self::assemble(file.tokens, file.merges, file.special)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn special_id(&self, s: &str) -> Option<TokenId> {
        self.special
            .in_id_order()
            .iter()
            .position(|t| *t == s)
            .map(|i| i as TokenId)
    }

    fn encode_chunk(&self, chunk: &str) -> Vec<TokenId> {
        if let Some(hit) = self.cache.lock().expect("bpe cache poisoned").get(chunk) {
            return hit.clone();
        }
        let mut syms: Vec<TokenId> = Vec::with_capacity(chunk.len());
        for c in chunk.chars() {
            match self.char_ids.get(&c) {
                Some(&id) => syms.push(id),
                None => {
                    let mut buf = [0u8; 4];
                    syms.extend(c.encode_utf8(&mut buf).bytes().map(|b| 4 + TokenId::from(b)));
                }
            }
        }
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, w[0], w[1], id)))
                .min();
            let Some((_, left, right, id)) = best else { break };
            merge_pair(&mut syms, left, right, id);
        }
        let mut cache = self.cache.lock().expect("bpe cache poisoned");
        if cache.len() < 100_000 {
            cache.insert(chunk.to_string(), syms.clone());
        }
        syms
    }

    /// Encodes text, recognising the special token strings verbatim.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for piece in split_specials(text, &self.special) {
            match piece {
                Piece::Special(s) => out.push(self.special_id(s).expect("split on known specials")),
                Piece::Text(t) => {
                    for chunk in chunks(t) {
                        out.extend(self.encode_chunk(chunk));
                    }
                }
            }
        }
        out
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String, DatasetError> {
        let mut bytes = Vec::new();
        for &id in ids {
            let tok = self.tokens.get(id as usize).ok_or(DatasetError::UnknownId {
                id,
                vocab_size: self.tokens.len(),
            })?;
            if (4..4 + BYTE_TOKENS as TokenId).contains(&id) {
                bytes.push((id - 4) as u8);
            } else {
                bytes.extend_from_slice(tok.as_bytes());
            }
        }
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    /// Text of a single token, for display.
    pub fn token_text(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }
}

fn merge_pair(syms: &mut Vec<TokenId>, left: TokenId, right: TokenId, merged: TokenId) {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
            out.push(merged);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    *syms = out;
}

enum Piece<'a> {
    Special(&'a str),
    Text(&'a str),
}

fn split_specials<'a>(text: &'a str, special: &'a SpecialTokens) -> Vec<Piece<'a>> {
    let names = special.in_id_order();
    let mut out = Vec::new();
    let mut rest = text;
    loop {
        let next = names
            .iter()
            .filter_map(|name| rest.find(name).map(|at| (at, *name)))
            .min_by_key(|(at, name)| (*at, usize::MAX - name.len()));
        match next {
            Some((at, name)) => {
                if at > 0 {
                    out.push(Piece::Text(&rest[..at]));
                }
                out.push(Piece::Special(name));
                rest = &rest[at + name.len()..];
            }
            None => {
                if !rest.is_empty() {
                    out.push(Piece::Text(rest));
                }
                return out;
            }
        }
    }
}

#[derive(PartialEq, Clone, Copy)]
enum Class {
    Word,
    Punct,
    Space,
}

fn class(c: char) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if c.is_alphanumeric() {
        Class::Word
    } else {
        Class::Punct
    }
}

/// Pre-tokenization into merge-isolated chunks.
pub(crate) fn chunks(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |i: usize| chars.get(i).map_or(text.len(), |(b, _)| *b);
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = i;
        let (_, c) = chars[i];
        if class(c) == Class::Space {
            let mut j = i;
            while j < chars.len() && class(chars[j].1) == Class::Space {
                j += 1;
            }
            // A single trailing ' ' before a non-space joins the next chunk.
            let hand_off = j < chars.len() && chars[j - 1].1 == ' ';
            if hand_off && j - 1 > i {
                out.push(&text[chars[start].0..end_of(j - 1)]);
                i = j - 1;
            } else if !hand_off {
                out.push(&text[chars[start].0..end_of(j)]);
                i = j;
            }
            if hand_off {
                // chars[i] is the ' ' that prefixes the next run
                let run_class = class(chars[i + 1].1);
                let mut k = i + 1;
                while k < chars.len() && class(chars[k].1) == run_class {
                    k += 1;
                }
                out.push(&text[chars[i].0..end_of(k)]);
                i = k;
            }
        } else {
            let run_class = class(c);
            let mut j = i;
            while j < chars.len() && class(chars[j].1) == run_class {
                j += 1;
            }
            out.push(&text[chars[start].0..end_of(j)]);
            i = j;
        }
    }
    out
}
