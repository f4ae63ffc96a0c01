use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Candidate, ExtentLevel, GenerateError};
use crate::claim::check_antecedent_basis;
use crate::dataset::Direction;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    #[serde(default)]
    pub must_include: Vec<String>,
    #[serde(default)]
    pub must_exclude: Vec<String>,
    #[serde(default)]
    pub enforce_antecedent_basis: bool,
}

impl ConstraintSet {
    pub fn is_empty(&self) -> bool {
        self.must_include.is_empty() && self.must_exclude.is_empty() && !self.enforce_antecedent_basis
    }

    pub fn validate(&self) -> Result<(), GenerateError> {
        let lower = |v: &[String]| v.iter().map(|s| s.to_lowercase()).collect::<Vec<_>>();
        let exclude = lower(&self.must_exclude);
        if let Some(p) = lower(&self.must_include).into_iter().find(|p| exclude.contains(p)) {
            return Err(GenerateError::InvalidRequest(format!("\"{p}\" is both required and excluded")));
        }
        if self.must_include.iter().chain(&self.must_exclude).any(|p| p.is_empty()) {
            return Err(GenerateError::InvalidRequest("empty constraint pattern".into()));
        }
        Ok(())
    }
}

/// Text of the document once `text` is inserted on the generating side.
pub fn insert_into(document: &str, text: &str, direction: Direction) -> String {
    let (a, b) = match direction {
        Direction::Forward => (document.trim_end(), text),
        Direction::Backward => (text, document.trim_start()),
    };
    match (a.is_empty(), b.is_empty()) {
        (true, _) => b.to_string(),
        (_, true) => a.to_string(),
        _ => format!("{a} {b}"),
    }
}

fn missing_phrases(text: &str) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for v in check_antecedent_basis(text).missing() {
        *out.entry(v.phrase.clone()).or_default() += 1;
    }
    out
}

/// Rejection reasons for one candidate; empty means accepted.
pub fn rejection_reasons(
    text: &str,
    extent: ExtentLevel,
    cs: &ConstraintSet,
    document: &str,
    direction: Direction,
) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut reasons = Vec::new();
    for p in &cs.must_exclude {
        if lower.contains(&p.to_lowercase()) {
            reasons.push(format!("must_exclude:{p}"));
        }
    }
    if matches!(extent, ExtentLevel::Span | ExtentLevel::Sentence) {
        for p in &cs.must_include {
            if !lower.contains(&p.to_lowercase()) {
                reasons.push(format!("must_include:{p}"));
            }
        }
    }
    if cs.enforce_antecedent_basis {
        let before = missing_phrases(document);
        let after = missing_phrases(&insert_into(document, text, direction));
        for (phrase, n) in after {
            if n > before.get(&phrase).copied().unwrap_or(0) {
                reasons.push(format!("missing_antecedent:{phrase}"));
            }
        }
    }
    reasons
}

/// Fills `rejected_reasons` on every candidate.
pub fn apply_constraints(candidates: &mut [Candidate], cs: &ConstraintSet, document: &str, direction: Direction) {
    for c in candidates {
        c.rejected_reasons = rejection_reasons(&c.text, c.extent, cs, document, direction);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(text: &str, extent: ExtentLevel) -> Candidate {
        Candidate {
            text: text.into(),
            extent,
            lm_logprob: -1.0,
            n_tokens: 1,
            relevancy: None,
            score: -1.0,
            rejected_reasons: Vec::new(),
        }
    }

    #[test]
    fn empty_set_accepts() {
        let mut c = vec![cand("anything at all", ExtentLevel::Span)];
        apply_constraints(&mut c, &ConstraintSet::default(), "A device", Direction::Forward);
        assert!(c[0].rejected_reasons.is_empty());
    }

    #[test]
    fn exclude_is_case_insensitive() {
        let cs = ConstraintSet { must_exclude: vec!["Wireless".into()], ..Default::default() };
        let r = rejection_reasons("a WIRELESS link", ExtentLevel::Word, &cs, "", Direction::Forward);
        assert_eq!(r, vec!["must_exclude:Wireless"]);
    }

    #[test]
    fn include_only_for_long_extents() {
        let cs = ConstraintSet { must_include: vec!["valve".into()], ..Default::default() };
        assert!(rejection_reasons("pump", ExtentLevel::Word, &cs, "", Direction::Forward).is_empty());
        assert_eq!(rejection_reasons("a pump;", ExtentLevel::Span, &cs, "", Direction::Forward), vec!["must_include:valve"]);
    }

    #[test]
    fn antecedent_enforcement() {
        let cs = ConstraintSet { enforce_antecedent_basis: true, ..Default::default() };
        let doc = "A device comprising: a housing;";
        assert_eq!(
            rejection_reasons("the sensor", ExtentLevel::Phrase, &cs, doc, Direction::Forward),
            vec!["missing_antecedent:sensor"]
        );
        assert!(rejection_reasons("the housing", ExtentLevel::Phrase, &cs, doc, Direction::Forward).is_empty());
        // Pre-existing violations are not blamed on the candidate.
        let doc = "wherein the lid is shut.";
        assert!(rejection_reasons("a box", ExtentLevel::Phrase, &cs, doc, Direction::Forward).is_empty());
        // Inserting an introduction before the reference repairs it.
        assert!(rejection_reasons("A box having a lid,", ExtentLevel::Span, &cs, doc, Direction::Backward).is_empty());
    }

    #[test]
    fn disjointness_checked() {
        let cs = ConstraintSet { must_include: vec!["A".into()], must_exclude: vec!["a".into()], ..Default::default() };
        assert!(cs.validate().is_err());
    }
}
