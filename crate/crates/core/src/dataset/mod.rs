//! Training records built from a corpus, word-reversed twins for backward
//! generation, BPE vocabularies and encoded training sequences.

mod bpe;

pub use bpe::{SpecialTokens, TokenId, Vocabulary, BOS_ID, EOS_ID, PAD_ID, SEP_ID, VOCAB_VERSION};

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claim::Claim;
use crate::corpus::PatentRecord;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("claim {claim} of {patent_id} depends on claim {parent}, which is missing")]
    MissingParent {
        patent_id: String,
        claim: u32,
        parent: u32,
    },
    #[error("no text to train on")]
    EmptyCorpus,
    #[error("token id {id} is outside the vocabulary ({vocab_size} tokens)")]
    UnknownId { id: TokenId, vocab_size: usize },
    #[error("need at least two distinct patents to split, found {0}")]
    TooFewPatents(usize),
    #[error("validation fraction must be in (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("invalid vocabulary: {0}")]
    BadVocabulary(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// How dependent claims become training records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFormat {
    /// Each dependent claim is a record of its own text.
    DependentAlone,
    /// The dependency chain root → leaf, joined by the separator token.
    IndependentPrepended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn flipped(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub text: String,
    pub patent_id: String,
    pub claim_number: u32,
    pub format: RecordFormat,
    pub direction: Direction,
}

/// Builds one forward record per claim.
pub fn build_records(
    corpus: &[PatentRecord],
    format: RecordFormat,
) -> Result<Vec<TrainingRecord>, DatasetError> {
    let sep = SpecialTokens::default().sep;
    let mut out = Vec::new();
    for patent in corpus {
        let by_number: BTreeMap<u32, &Claim> = patent.claims.iter().map(|c| (c.number, c)).collect();
        for claim in &patent.claims {
            let text = match (format, claim.depends_on) {
                (_, None) | (RecordFormat::DependentAlone, Some(_)) => claim.text.clone(),
                (RecordFormat::IndependentPrepended, Some(_)) => {
                    let chain = dependency_chain(claim, &by_number, &patent.patent_id)?;
                    chain
                        .iter()
                        .map(|c| c.text.as_str())
                        .collect::<Vec<_>>()
                        .join(&format!(" {sep} "))
                }
            };
            if format == RecordFormat::DependentAlone {
                if let Some(parent) = claim.depends_on {
                    if !by_number.contains_key(&parent) {
                        return Err(DatasetError::MissingParent {
                            patent_id: patent.patent_id.clone(),
                            claim: claim.number,
                            parent,
                        });
                    }
                }
            }
            if text.trim().is_empty() {
                continue;
            }
            out.push(TrainingRecord {
                text,
                patent_id: patent.patent_id.clone(),
                claim_number: claim.number,
                format,
                direction: Direction::Forward,
            });
        }
    }
    Ok(out)
}

fn dependency_chain<'a>(
    leaf: &'a Claim,
    by_number: &BTreeMap<u32, &'a Claim>,
    patent_id: &str,
) -> Result<Vec<&'a Claim>, DatasetError> {
    let mut chain = vec![leaf];
    let mut current = leaf;
    while let Some(parent) = current.depends_on {
        let found = by_number
            .get(&parent)
            .filter(|p| p.number < current.number)
            .ok_or_else(|| DatasetError::MissingParent {
                patent_id: patent_id.to_string(),
                claim: current.number,
                parent,
            })?;
        chain.push(found);
        current = found;
    }
    chain.reverse();
    Ok(chain)
}

/// Collapses whitespace runs to single spaces and trims.
pub fn normalize_spaces(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Reverses whitespace-delimited words, joining with single spaces.
pub fn reverse_words(text: &str) -> String {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    words.reverse();
    words.join(" ")
}

/// Word-reversed twin of a record, with the direction flipped.
pub fn reverse_record(record: &TrainingRecord) -> TrainingRecord {
    TrainingRecord {
        text: reverse_words(&record.text),
        direction: record.direction.flipped(),
        ..record.clone()
    }
}

/// Records in the requested direction (forward records are reversed when
/// `Backward` is asked for).
pub fn with_direction(records: &[TrainingRecord], direction: Direction) -> Vec<TrainingRecord> {
    records
        .iter()
        .map(|r| if r.direction == direction { r.clone() } else { reverse_record(r) })
        .collect()
}

/// Splits by patent so that no patent contributes to both sides.
pub fn split_train_val(
    records: &[TrainingRecord],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<TrainingRecord>, Vec<TrainingRecord>), DatasetError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(val_fraction));
    }
    let patents: BTreeSet<&str> = records.iter().map(|r| r.patent_id.as_str()).collect();
    if patents.len() < 2 {
        return Err(DatasetError::TooFewPatents(patents.len()));
    }
    let mut patents: Vec<&str> = patents.into_iter().collect();
    patents.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((patents.len() as f64 * val_fraction).round() as usize).clamp(1, patents.len() - 1);
    let val_ids: BTreeSet<&str> = patents[..n_val].iter().copied().collect();
    let (val, train): (Vec<_>, Vec<_>) = records
        .iter()
        .cloned()
        .partition(|r| val_ids.contains(r.patent_id.as_str()));
    Ok((train, val))
}

/// Token sequences for language-model training, tied to the vocabulary they
/// were encoded with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedDataset {
    pub vocab_hash: String,
    pub sequences: Vec<Vec<TokenId>>,
}

/// `BOS content EOS`, at most `max_len` tokens. Forward records lose tokens
/// from the left and backward records from the right, so the tail of a
/// prepended chain (the dependent claim) survives either way.
pub fn encode_record(record: &TrainingRecord, vocab: &Vocabulary, max_len: usize) -> Vec<TokenId> {
    let mut content = vocab.encode(&record.text);
    let budget = max_len.saturating_sub(2);
    if content.len() > budget {
        content = match record.direction {
            Direction::Forward => content.split_off(content.len() - budget),
            Direction::Backward => {
                content.truncate(budget);
                content
            }
        };
    }
    let mut seq = Vec::with_capacity(content.len() + 2);
    seq.push(BOS_ID);
    seq.extend(content);
    seq.push(EOS_ID);
    seq
}

pub fn encode_records(records: &[TrainingRecord], vocab: &Vocabulary, max_len: usize) -> EncodedDataset {
    EncodedDataset {
        vocab_hash: vocab.hash().to_string(),
        sequences: records.iter().map(|r| encode_record(r, vocab, max_len)).collect(),
    }
}

pub fn write_records(path: impl AsRef<Path>, records: &[TrainingRecord]) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| DatasetError::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<TrainingRecord>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn patent(id: &str, claims: Vec<Claim>) -> PatentRecord {
        PatentRecord {
            patent_id: id.into(),
            grant_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            cpc_sections: Default::default(),
            cited_patent_ids: vec![],
            citing_patent_ids: vec![],
            inventor_ids: vec![],
            claims,
        }
    }

    fn two_claims() -> PatentRecord {
        patent(
            "P1",
            vec![
                Claim::new("P1", 1, "A method comprising X."),
                Claim::new("P1", 2, "The method of claim 1, wherein Y.").with_parent(1),
            ],
        )
    }

    #[test]
    fn dependent_alone_keeps_own_text() {
        let recs = build_records(&[two_claims()], RecordFormat::DependentAlone).unwrap();
        assert_eq!(recs[1].text, "The method of claim 1, wherein Y.");
        assert_eq!(recs[0].text, "A method comprising X.");
    }

    #[test]
    fn prepended_joins_with_separator() {
        let recs = build_records(&[two_claims()], RecordFormat::IndependentPrepended).unwrap();
        assert_eq!(recs[0].text, "A method comprising X.");
        assert_eq!(
            recs[1].text,
            "A method comprising X. <|dep|> The method of claim 1, wherein Y."
        );
    }

    #[test]
    fn chains_resolve_root_to_leaf() {
        let p = patent(
            "P",
            vec![
                Claim::new("P", 1, "one"),
                Claim::new("P", 2, "two").with_parent(1),
                Claim::new("P", 3, "three").with_parent(2),
            ],
        );
        let recs = build_records(&[p], RecordFormat::IndependentPrepended).unwrap();
        assert_eq!(recs[2].text, "one <|dep|> two <|dep|> three");
    }

    #[test]
    fn missing_parent() {
        let p = patent("P", vec![Claim::new("P", 2, "two").with_parent(1)]);
        for format in [RecordFormat::DependentAlone, RecordFormat::IndependentPrepended] {
            assert!(matches!(
                build_records(&[p.clone()], format),
                Err(DatasetError::MissingParent { parent: 1, .. })
            ));
        }
    }

    #[test]
    fn formats_agree_on_independent_claims() {
        let p = patent("P", vec![Claim::new("P", 1, "a"), Claim::new("P", 2, "b")]);
        let a: Vec<_> = build_records(&[p.clone()], RecordFormat::DependentAlone)
            .unwrap()
            .into_iter()
            .map(|r| r.text)
            .collect();
        let b: Vec<_> = build_records(&[p], RecordFormat::IndependentPrepended)
            .unwrap()
            .into_iter()
            .map(|r| r.text)
            .collect();
        assert_eq!(a, b);
    }

    fn rec(text: &str) -> TrainingRecord {
        TrainingRecord {
            text: text.into(),
            patent_id: "P".into(),
            claim_number: 1,
            format: RecordFormat::DependentAlone,
            direction: Direction::Forward,
        }
    }

    #[test]
    fn reversal() {
        let r = reverse_record(&rec("a b c"));
        assert_eq!(r.text, "c b a");
        assert_eq!(r.direction, Direction::Backward);
        assert_eq!(reverse_record(&rec("solo")).text, "solo");
        let twice = reverse_record(&reverse_record(&rec("  a\tb \n c ")));
        assert_eq!(twice.text, "a b c");
        assert_eq!(twice.direction, Direction::Forward);
    }

    fn many(n: usize) -> Vec<TrainingRecord> {
        (0..n)
            .flat_map(|p| {
                (1..=3).map(move |c| TrainingRecord {
                    text: format!("claim {c}"),
                    patent_id: format!("P{p}"),
                    claim_number: c,
                    format: RecordFormat::DependentAlone,
                    direction: Direction::Forward,
                })
            })
            .collect()
    }

    #[test]
    fn split_by_patent() {
        let recs = many(10);
        let (train, val) = split_train_val(&recs, 0.2, 7).unwrap();
        let val_patents: BTreeSet<_> = val.iter().map(|r| r.patent_id.clone()).collect();
        let train_patents: BTreeSet<_> = train.iter().map(|r| r.patent_id.clone()).collect();
        assert_eq!(val_patents.len(), 2);
        assert!(val_patents.is_disjoint(&train_patents));
        assert_eq!(train.len() + val.len(), recs.len());
        assert_eq!(split_train_val(&recs, 0.2, 7).unwrap(), (train, val));
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_train_val(&many(1), 0.2, 0), Err(DatasetError::TooFewPatents(1))));
        assert!(matches!(split_train_val(&many(3), 1.0, 0), Err(DatasetError::InvalidFraction(_))));
    }

    #[test]
    fn truncation_keeps_dependent_tail() {
        let vocab = Vocabulary::train(&["alpha beta gamma delta", "delta gamma beta alpha"], 400).unwrap();
        let fwd = rec("alpha beta gamma delta");
        let seq = encode_record(&fwd, &vocab, 4);
        assert_eq!(seq.len(), 4);
        assert_eq!(seq[0], BOS_ID);
        assert_eq!(*seq.last().unwrap(), EOS_ID);
        let kept = vocab.decode(&seq[1..3]).unwrap();
        assert!(kept.len() < fwd.text.len() && fwd.text.ends_with(&kept), "{kept:?}");
        let bwd = reverse_record(&fwd);
        let seq = encode_record(&bwd, &vocab, 4);
        let kept = vocab.decode(&seq[1..3]).unwrap();
        assert!(kept.len() < bwd.text.len() && bwd.text.starts_with(&kept), "{kept:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reversal_is_an_involution(text in "\\PC{0,60}") {
                let twice = reverse_record(&reverse_record(&rec(&text)));
                prop_assert_eq!(twice.text, normalize_spaces(&text));
            }
        }
    }
}
