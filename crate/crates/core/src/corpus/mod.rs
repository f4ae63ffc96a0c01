//! Inventor-centric patent corpora: PatentsView-style search, citation
//! expansion, keyword filtering and JSONL persistence.

mod build;
mod client;
mod fetch;
mod filter;
mod store;

pub use build::build_corpus;
pub use client::{
    ApiClient, ApiRequest, ApiResponse, Endpoints, HttpTransport, RateLimiter, RecordingTransport,
    ReplayTransport, RetryPolicy, Transport, TransportError,
};
pub use fetch::{
    expand_by_citations, fetch_inventor_patents, fetch_patents, ApiClaimSource, BulkClaimSource,
    ClaimSource, NoClaims,
};
pub use filter::apply_keyword_filters;
pub use store::{load_corpus, persist_corpus, read_corpus, write_corpus, CORPUS_SCHEMA_VERSION};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claim::Claim;

/// Top level of the Cooperative Patent Classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CpcSection {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
    Y,
}

impl CpcSection {
    pub const ALL: [CpcSection; 9] = [
        CpcSection::A,
        CpcSection::B,
        CpcSection::C,
        CpcSection::D,
        CpcSection::E,
        CpcSection::F,
        CpcSection::G,
        CpcSection::H,
        CpcSection::Y,
    ];

    /// Position in [`CpcSection::ALL`], used as the classifier label index.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|s| *s == self).expect("listed")
    }

    pub fn from_index(idx: usize) -> Option<Self> {
        Self::ALL.get(idx).copied()
    }

    pub fn letter(self) -> char {
        match self {
            CpcSection::A => 'A',
            CpcSection::B => 'B',
            CpcSection::C => 'C',
            CpcSection::D => 'D',
            CpcSection::E => 'E',
            CpcSection::F => 'F',
            CpcSection::G => 'G',
            CpcSection::H => 'H',
            CpcSection::Y => 'Y',
        }
    }
}

impl fmt::Display for CpcSection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for CpcSection {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next().map(|c| c.to_ascii_uppercase()), chars.next()) {
            (Some(c), None) => CpcSection::ALL
                .into_iter()
                .find(|sec| sec.letter() == c)
                .ok_or_else(|| CorpusError::InvalidQuery(format!("unknown CPC section {s:?}"))),
            _ => Err(CorpusError::InvalidQuery(format!("unknown CPC section {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventorQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name_first: Option<String>,
    pub name_last: String,
    /// City or country of the inventor's last known location.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpc_section: Option<CpcSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grant_date_range: Option<(NaiveDate, NaiveDate)>,
}

impl InventorQuery {
    pub fn by_last_name(name_last: impl Into<String>) -> Self {
        Self {
            name_first: None,
            name_last: name_last.into(),
            location: None,
            cpc_section: None,
            grant_date_range: None,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.name_last.trim().is_empty() {
            return Err(CorpusError::InvalidQuery("inventor last name is empty".into()));
        }
        if let Some((start, end)) = self.grant_date_range {
            if start > end {
                return Err(CorpusError::InvalidQuery(format!(
                    "grant date range starts after it ends ({start} > {end})"
                )));
            }
        }
        Ok(())
    }
}

/// Which citation links are followed during expansion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CitationDirection {
    /// Patents cited by the current set.
    #[default]
    Backward,
    /// Cited patents and patents citing the current set.
    Both,
}

/// Whether keyword filters run on the seed set or on the expanded set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStage {
    BeforeExpansion,
    #[default]
    AfterExpansion,
}

/// The recipe a corpus was built from; stored as the corpus file header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: InventorQuery,
    pub citation_depth: u32,
    #[serde(default)]
    pub include_keywords: Vec<String>,
    #[serde(default)]
    pub exclude_keywords: Vec<String>,
    pub fetched_at: DateTime<Utc>,
    #[serde(default)]
    pub citation_direction: CitationDirection,
    #[serde(default)]
    pub filter_stage: FilterStage,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        self.seed.validate()?;
        let lower = |v: &[String]| -> BTreeSet<String> { v.iter().map(|k| k.to_lowercase()).collect() };
        let both: Vec<_> = lower(&self.include_keywords)
            .intersection(&lower(&self.exclude_keywords))
            .cloned()
            .collect();
        if !both.is_empty() {
            return Err(CorpusError::InvalidQuery(format!(
                "keywords both included and excluded: {}",
                both.join(", ")
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatentRecord {
    pub patent_id: String,
    pub grant_date: NaiveDate,
    pub cpc_sections: BTreeSet<CpcSection>,
    #[serde(default)]
    pub cited_patent_ids: Vec<String>,
    /// Forward citations; only populated when the API returned them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub citing_patent_ids: Vec<String>,
    #[serde(default)]
    pub inventor_ids: Vec<String>,
    #[serde(default)]
    pub claims: Vec<Claim>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("API unavailable: {0}")]
    ApiUnavailable(String),
    #[error("no inventor matched the query")]
    NoMatch,
    #[error("rate limited by the API (retry after {retry_after:?} s)")]
    RateLimited { retry_after: Option<u64> },
    #[error("malformed API response: {0}")]
    BadResponse(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus file has schema version {found}, expected {expected}")]
    SchemaVersionMismatch { found: u64, expected: u64 },
    #[error("malformed corpus file at line {line}: {message}")]
    Malformed { line: usize, message: String },
}
