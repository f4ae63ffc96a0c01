//! Patent-claim structure: numbered claims, dependency links, spans and
//! antecedent-basis checking.
//!
//! Everything in this module is a pure function over borrowed text, so it can
//! be called from any number of threads.

mod antecedent;
mod block;
mod spans;

pub use antecedent::{check_antecedent_basis, AntecedentReport, Violation, ViolationKind};
pub use block::{build_dependency_graph, parse_claim_block, DependencyGraph};
pub use spans::{split_spans, ClaimSpan, ParsedClaim, SpanRole};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single numbered claim with its body text (no number prefix).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Claim {
    pub patent_id: String,
    pub number: u32,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depends_on: Option<u32>,
}

impl Claim {
    pub fn new(patent_id: impl Into<String>, number: u32, text: impl Into<String>) -> Self {
        Self {
            patent_id: patent_id.into(),
            number,
            text: text.into(),
            depends_on: None,
        }
    }

    pub fn with_parent(mut self, parent: u32) -> Self {
        self.depends_on = Some(parent);
        self
    }

    pub fn is_independent(&self) -> bool {
        self.depends_on.is_none()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClaimError {
    #[error("claim text is blank")]
    EmptyInput,
    #[error("no line starting with a claim number (\"<n>. \") was found")]
    NoNumberedClaims,
    #[error("claim numbers must be strictly increasing: {found} follows {previous}")]
    NonMonotonicNumbers { previous: u32, found: u32 },
    #[error("claim {claim} depends on claim {target}, which is not an earlier claim in the block")]
    DanglingDependency { claim: u32, target: u32 },
    #[error("claim {0} has an empty body")]
    EmptyClaim(u32),
}
