//! Measurement side: span relevancy, CPC-section classification of text and
//! the personalization-overlap metric between label distributions.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claim::split_spans;
use crate::corpus::{CpcSection, PatentRecord};
use crate::dataset::{TokenId, Vocabulary, BOS_ID, EOS_ID, SEP_ID};
use crate::nn::{ClassifierMode, EncoderClassifier, LabeledSequence, NnError};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("text is empty")]
    EmptyText,
    #[error("label distribution has no positive count")]
    EmptyDistribution,
    #[error("classifier is in {found:?} mode, expected {expected:?}")]
    WrongMode { found: ClassifierMode, expected: ClassifierMode },
    #[error(transparent)]
    Model(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanPair {
    pub first: String,
    pub second: String,
}

impl SpanPair {
    pub fn new(first: impl Into<String>, second: impl Into<String>) -> Self {
        SpanPair { first: first.into(), second: second.into() }
    }
}

/// `BOS text EOS`, clipped on the right to `max_len`.
pub fn encode_text(vocab: &Vocabulary, text: &str, max_len: usize) -> Vec<TokenId> {
    let mut ids = vec![BOS_ID];
    ids.extend(vocab.encode(text));
    ids.push(EOS_ID);
    ids.truncate(max_len.max(1));
    ids
}

/// `BOS first SEP second EOS`. When too long, `first` loses tokens from the
/// left and `second` from the right so the junction is always kept.
pub fn encode_pair(vocab: &Vocabulary, first: &str, second: &str, max_len: usize) -> Vec<TokenId> {
    let mut a = vocab.encode(first);
    let mut b = vocab.encode(second);
    let budget = max_len.saturating_sub(3);
    while a.len() + b.len() > budget {
        if a.len() >= b.len() {
            a.remove(0);
        } else {
            b.pop();
        }
    }
    let mut ids = Vec::with_capacity(a.len() + b.len() + 3);
    ids.push(BOS_ID);
    ids.extend(a);
    ids.push(SEP_ID);
    ids.extend(b);
    ids.push(EOS_ID);
    ids
}

fn expect_mode(clf: &EncoderClassifier, expected: ClassifierMode) -> Result<(), MeasureError> {
    if clf.mode() != expected {
        return Err(MeasureError::WrongMode { found: clf.mode(), expected });
    }
    Ok(())
}

/// Probability that `pair.second` directly follows `pair.first`.
pub fn score_span_relevancy(clf: &EncoderClassifier, vocab: &Vocabulary, pair: &SpanPair) -> Result<f64, MeasureError> {
    expect_mode(clf, ClassifierMode::Relevancy)?;
    clf.check_vocab(vocab.hash())?;
    if pair.first.trim().is_empty() || pair.second.trim().is_empty() {
        return Err(MeasureError::EmptyText);
    }
    let ids = encode_pair(vocab, &pair.first, &pair.second, clf.config().context_len);
    Ok(clf.predict(&ids)?[1])
}

/// Per-section probabilities, in [`CpcSection::ALL`] order.
pub fn cpc_probabilities(clf: &EncoderClassifier, vocab: &Vocabulary, text: &str) -> Result<Vec<f64>, MeasureError> {
    expect_mode(clf, ClassifierMode::Cpc)?;
    clf.check_vocab(vocab.hash())?;
    if text.trim().is_empty() {
        return Err(MeasureError::EmptyText);
    }
    Ok(clf.predict(&encode_text(vocab, text, clf.config().context_len))?)
}

pub fn sections_above(probs: &[f64], threshold: f64) -> BTreeSet<CpcSection> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .filter_map(|(i, _)| CpcSection::from_index(i))
        .collect()
}

pub fn classify_cpc(
    clf: &EncoderClassifier,
    vocab: &Vocabulary,
    text: &str,
    threshold: f64,
) -> Result<BTreeSet<CpcSection>, MeasureError> {
    Ok(sections_above(&cpc_probabilities(clf, vocab, text)?, threshold))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub counts: BTreeMap<CpcSection, u64>,
}

impl LabelDistribution {
    pub fn get(&self, s: CpcSection) -> u64 {
        self.counts.get(&s).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn from_counts(pairs: &[(CpcSection, u64)]) -> Self {
        let mut d = LabelDistribution::default();
        for &(s, c) in pairs {
            *d.counts.entry(s).or_default() += c;
        }
        d
    }
}

/// Co-occurrence counts keyed "A&G" (sections in ascending order).
pub type JointCounts = BTreeMap<String, u64>;

pub fn joint_key(a: CpcSection, b: CpcSection) -> String {
    let (x, y) = if a <= b { (a, b) } else { (b, a) };
    format!("{}&{}", x.letter(), y.letter())
}

/// Marginal counts (a text with A and G increments both) and pairwise joint counts.
pub fn label_distribution(predictions: &[BTreeSet<CpcSection>]) -> (LabelDistribution, JointCounts) {
    let mut dist = LabelDistribution { counts: CpcSection::ALL.iter().map(|&s| (s, 0)).collect() };
    let mut joint = JointCounts::new();
    for set in predictions {
        for &s in set {
            *dist.counts.entry(s).or_default() += 1;
        }
        let v: Vec<CpcSection> = set.iter().copied().collect();
        for (i, &a) in v.iter().enumerate() {
            for &b in &v[i + 1..] {
                *joint.entry(joint_key(a, b)).or_default() += 1;
            }
        }
    }
    (dist, joint)
}

/// Classifies each text and counts labels. Blank texts count as unlabeled.
pub fn label_distribution_of(
    clf: &EncoderClassifier,
    vocab: &Vocabulary,
    texts: &[String],
    threshold: f64,
) -> Result<(LabelDistribution, JointCounts, Vec<BTreeSet<CpcSection>>), MeasureError> {
    let mut preds = Vec::with_capacity(texts.len());
    for t in texts {
        preds.push(match classify_cpc(clf, vocab, t, threshold) {
            Err(MeasureError::EmptyText) => BTreeSet::new(),
            other => other?,
        });
    }
    let (d, j) = label_distribution(&preds);
    Ok((d, j, preds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizationScore {
    pub value: f64,
    pub method: String,
}

pub const OVERLAP_METHOD: &str = "normalized_multiset_jaccard";

/// Σ min / Σ max over counts rescaled to a common total. Rescaling is done by
/// cross-multiplying with the other side's total, so the ratio is exact
/// integer arithmetic until the final division.
pub fn personalization_overlap(
    generated: &LabelDistribution,
    reference: &LabelDistribution,
) -> Result<PersonalizationScore, MeasureError> {
    let (gt, rt) = (generated.total() as u128, reference.total() as u128);
    if gt == 0 || rt == 0 {
        return Err(MeasureError::EmptyDistribution);
    }
    let (mut lo, mut hi) = (0u128, 0u128);
    for s in CpcSection::ALL {
        let g = generated.get(s) as u128 * rt;
        let r = reference.get(s) as u128 * gt;
        lo += g.min(r);
        hi += g.max(r);
    }
    Ok(PersonalizationScore { value: lo as f64 / hi as f64, method: OVERLAP_METHOD.into() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    /// Token range of the window within the encoded text (BOS excluded).
    pub start: usize,
    pub end: usize,
    pub probabilities: Vec<f64>,
    pub sections: BTreeSet<CpcSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub whole: Vec<f64>,
    pub whole_sections: BTreeSet<CpcSection>,
    pub windows: Vec<WindowPrediction>,
}

/// Predictions over sliding windows (width context_len/2, stride
/// context_len/4) next to the whole-text prediction.
pub fn coverage_diagnostic(
    clf: &EncoderClassifier,
    vocab: &Vocabulary,
    text: &str,
    threshold: f64,
) -> Result<CoverageReport, MeasureError> {
    let whole = cpc_probabilities(clf, vocab, text)?;
    let ids = vocab.encode(text);
    let c = clf.config().context_len;
    let width = (c / 2).max(1);
    let stride = (c / 4).max(1);
    let mut windows = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + width).min(ids.len());
        let mut seq = vec![BOS_ID];
        seq.extend_from_slice(&ids[start..end]);
        let probabilities = clf.predict(&seq)?;
        windows.push(WindowPrediction { start, end, sections: sections_above(&probabilities, threshold), probabilities });
        if end >= ids.len() {
            break;
        }
        start += stride;
    }
    Ok(CoverageReport { whole_sections: sections_above(&whole, threshold), whole, windows })
}

/// Area under the ROC curve via the Mann-Whitney statistic (ties count half).
pub fn roc_auc(positives: &[f64], negatives: &[f64]) -> f64 {
    if positives.is_empty() || negatives.is_empty() {
        return 0.5;
    }
    let mut wins = 0.0;
    for &p in positives {
        for &n in negatives {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (positives.len() * negatives.len()) as f64
}

/// Span texts of every claim of every patent, in claim order.
fn patent_spans(p: &PatentRecord) -> Vec<Vec<String>> {
    p.claims
        .iter()
        .filter_map(|c| split_spans(c).ok())
        .map(|pc| pc.spans.into_iter().map(|s| format!("{}{}", s.text, s.trailing_separator).trim().to_string()).collect())
        .collect()
}

/// Positives are adjacent spans of one claim; each positive is matched by a
/// negative pairing its first span with a span of a different patent.
pub fn relevancy_pairs(corpus: &[PatentRecord], seed: u64) -> Vec<(SpanPair, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spans: Vec<Vec<Vec<String>>> = corpus.iter().map(patent_spans).collect();
    let pool: Vec<(usize, &String)> = spans
        .iter()
        .enumerate()
        .flat_map(|(i, claims)| claims.iter().flatten().map(move |s| (i, s)))
        .collect();
    let mut out = Vec::new();
    for (i, claims) in spans.iter().enumerate() {
        for claim in claims {
            for w in claim.windows(2) {
                out.push((SpanPair::new(&w[0], &w[1]), true));
                let other = loop {
                    let (j, s) = pool.choose(&mut rng).expect("non-empty pool");
                    if *j != i || corpus.len() < 2 {
                        break s;
                    }
                };
                out.push((SpanPair::new(&w[0], other.as_str()), false));
            }
        }
    }
    out
}

pub fn encode_relevancy_examples(
    pairs: &[(SpanPair, bool)],
    vocab: &Vocabulary,
    max_len: usize,
) -> Vec<LabeledSequence> {
    pairs
        .iter()
        .map(|(p, rel)| LabeledSequence {
            ids: encode_pair(vocab, &p.first, &p.second, max_len),
            labels: vec![usize::from(*rel)],
        })
        .collect()
}

/// One example per claim, labeled with the patent's CPC sections.
pub fn cpc_examples(corpus: &[PatentRecord], vocab: &Vocabulary, max_len: usize) -> Vec<LabeledSequence> {
    corpus
        .iter()
        .flat_map(|p| {
            let labels: Vec<usize> = p.cpc_sections.iter().map(|s| s.index()).collect();
            p.claims
                .iter()
                .map(move |c| LabeledSequence { ids: encode_text(vocab, &c.text, max_len), labels: labels.clone() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use CpcSection::{A, G};

    fn set(s: &[CpcSection]) -> BTreeSet<CpcSection> {
        s.iter().copied().collect()
    }

    #[test]
    fn counting_definition() {
        let (d, j) = label_distribution(&[set(&[A]), set(&[A, G]), set(&[G])]);
        assert_eq!(d.get(A), 2);
        assert_eq!(d.get(G), 2);
        assert_eq!(d.total(), 4);
        assert_eq!(j.get("A&G"), Some(&1));
        let (empty, j) = label_distribution(&[]);
        assert_eq!(empty.total(), 0);
        assert!(j.is_empty());
    }

    #[test]
    fn overlap_examples() {
        let g = LabelDistribution::from_counts(&[(A, 2), (G, 1)]);
        let r = LabelDistribution::from_counts(&[(A, 1), (G, 1)]);
        let v = personalization_overlap(&g, &r).unwrap().value;
        // Scaled to 6 each: {A:4, G:2} vs {A:3, G:3}: min-sum 5, max-sum 7.
        assert_eq!(v, 5.0 / 7.0);
        assert_eq!(personalization_overlap(&g, &g).unwrap().value, 1.0);
        let d = LabelDistribution::from_counts(&[(CpcSection::H, 4)]);
        assert_eq!(personalization_overlap(&g, &d).unwrap().value, 0.0);
        let z = LabelDistribution::default();
        assert!(matches!(personalization_overlap(&g, &z), Err(MeasureError::EmptyDistribution)));
    }

    #[test]
    fn auc_edges() {
        assert_eq!(roc_auc(&[0.9, 0.8], &[0.1, 0.2]), 1.0);
        assert_eq!(roc_auc(&[0.1], &[0.9]), 0.0);
        assert_eq!(roc_auc(&[0.5], &[0.5]), 0.5);
    }

    #[test]
    fn joint_key_is_ordered() {
        assert_eq!(joint_key(G, A), "A&G");
    }

    fn dist() -> impl proptest::strategy::Strategy<Value = LabelDistribution> {
        proptest::collection::vec(0u64..20, 9).prop_map(|v| LabelDistribution {
            counts: CpcSection::ALL.iter().copied().zip(v).collect(),
        })
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn overlap_is_symmetric_and_bounded(g in dist(), r in dist()) {
            prop_assume!(g.total() > 0 && r.total() > 0);
            let a = personalization_overlap(&g, &r).unwrap().value;
            let b = personalization_overlap(&r, &g).unwrap().value;
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
            let scaled = LabelDistribution { counts: g.counts.iter().map(|(s, c)| (*s, c * 3)).collect() };
            prop_assert_eq!(personalization_overlap(&g, &scaled).unwrap().value, 1.0);
        }

        #[test]
        fn joint_never_exceeds_marginals(sets in proptest::collection::vec(proptest::collection::btree_set(0usize..9, 0..4), 0..20)) {
            let preds: Vec<BTreeSet<CpcSection>> = sets
                .iter()
                .map(|s| s.iter().filter_map(|&i| CpcSection::from_index(i)).collect())
                .collect();
            let (d, j) = label_distribution(&preds);
            let labeled = preds.iter().filter(|p| !p.is_empty()).count() as u64;
            prop_assert!(d.total() >= labeled);
            for (key, &n) in &j {
                let a: CpcSection = key[..1].parse().unwrap();
                let b: CpcSection = key[2..].parse().unwrap();
                prop_assert!(n <= d.get(a) && n <= d.get(b));
            }
        }
    }
}
