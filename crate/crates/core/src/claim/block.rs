use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;

use super::{Claim, ClaimError};

static CLAIM_NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*(\d+)\.\s").expect("valid regex"));

static DEPENDENCY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:of|according\s+to|as\s+in)\s+claim\s+(\d+)").expect("valid regex")
});

/// Parent claim number → dependent claim numbers, in ascending order.
///
/// Independent claims are always keys; dependent claims only appear as keys
/// when something depends on them.
pub type DependencyGraph = BTreeMap<u32, Vec<u32>>;

/// Splits a block of numbered claims ("1. ...\n2. ...") into [`Claim`]s and
/// resolves "of claim N" style dependencies.
pub fn parse_claim_block(patent_id: &str, raw: &str) -> Result<Vec<Claim>, ClaimError> {
    if raw.trim().is_empty() {
        return Err(ClaimError::EmptyInput);
    }

    let heads: Vec<(u32, usize, usize)> = CLAIM_NUMBER
        .captures_iter(raw)
        .filter_map(|caps| {
            let whole = caps.get(0)?;
            // Numbers too large for u32 are not claim numbers.
            let number = caps[1].parse::<u32>().ok()?;
            Some((number, whole.start(), whole.end()))
        })
        .collect();
    if heads.is_empty() {
        return Err(ClaimError::NoNumberedClaims);
    }

    let mut claims = Vec::with_capacity(heads.len());
    for (idx, &(number, _, body_start)) in heads.iter().enumerate() {
        let body_end = heads.get(idx + 1).map_or(raw.len(), |next| next.1);
        if let Some(prev) = claims.last().map(|c: &Claim| c.number) {
            if number <= prev {
                return Err(ClaimError::NonMonotonicNumbers {
                    previous: prev,
                    found: number,
                });
            }
        }
        let text = raw[body_start..body_end].trim();
        if text.is_empty() {
            return Err(ClaimError::EmptyClaim(number));
        }
        let mut claim = Claim::new(patent_id, number, text);
        claim.depends_on = dependency_target(text);
        claims.push(claim);
    }

    for claim in &claims {
        if let Some(target) = claim.depends_on {
            let known = claims.iter().any(|c| c.number == target);
            if target >= claim.number || !known {
                return Err(ClaimError::DanglingDependency {
                    claim: claim.number,
                    target,
                });
            }
        }
    }
    Ok(claims)
}

fn dependency_target(text: &str) -> Option<u32> {
    DEPENDENCY
        .captures(text)
        .and_then(|caps| caps[1].parse::<u32>().ok())
}

/// Builds the parent → children forest from validated claims.
pub fn build_dependency_graph(claims: &[Claim]) -> DependencyGraph {
    let mut graph = DependencyGraph::new();
    for claim in claims {
        match claim.depends_on {
            None => {
                graph.entry(claim.number).or_default();
            }
            Some(parent) => graph.entry(parent).or_default().push(claim.number),
        }
    }
    for children in graph.values_mut() {
        children.sort_unstable();
    }
    graph
}
