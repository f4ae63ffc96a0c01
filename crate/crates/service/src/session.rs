use chrono::{DateTime, Utc};
use claimforge::generate::{Candidate, ExtentLevel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackAction {
    Accepted,
    Rejected,
    Edited,
}

/// A candidate as returned to the client and kept in session history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredCandidate {
    pub candidate_id: String,
    pub text: String,
    pub extent: ExtentLevel,
    pub lm_logprob: f64,
    pub relevancy: Option<f64>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected_reasons: Vec<String>,
}

impl StoredCandidate {
    pub fn new(candidate_id: String, c: Candidate) -> Self {
        StoredCandidate {
            candidate_id,
            text: c.text,
            extent: c.extent,
            lm_logprob: c.lm_logprob,
            relevancy: c.relevancy,
            score: c.score,
            rejected_reasons: c.rejected_reasons,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub session_id: String,
    pub candidate_id: String,
    pub action: FeedbackAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_text: Option<String>,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryItem {
    Completion {
        seq: u64,
        at: DateTime<Utc>,
        context: String,
        request: serde_json::Value,
        candidates: Vec<StoredCandidate>,
    },
    Feedback {
        seq: u64,
        event: FeedbackEvent,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    /// The most recent draft text the client sent.
    pub document: String,
    pub created_at: DateTime<Utc>,
    pub last_active: DateTime<Utc>,
    pub history: Vec<HistoryItem>,
}

impl Session {
    pub fn new(session_id: String, at: DateTime<Utc>) -> Self {
        Session { session_id, document: String::new(), created_at: at, last_active: at, history: Vec::new() }
    }

    /// The candidate and the context it was generated for.
    pub fn find_candidate(&self, candidate_id: &str) -> Option<(&str, &StoredCandidate)> {
        self.history.iter().find_map(|h| match h {
            HistoryItem::Completion { context, candidates, .. } => {
                candidates.iter().find(|c| c.candidate_id == candidate_id).map(|c| (context.as_str(), c))
            }
            HistoryItem::Feedback { .. } => None,
        })
    }
}

/// One exported (context, candidate, action) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub seq: u64,
    pub session_id: String,
    pub candidate_id: String,
    pub context: String,
    pub candidate: String,
    pub action: FeedbackAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_text: Option<String>,
    pub timestamp: DateTime<Utc>,
}

impl Annotation {
    pub fn event(&self) -> FeedbackEvent {
        FeedbackEvent {
            session_id: self.session_id.clone(),
            candidate_id: self.candidate_id.clone(),
            action: self.action,
            edited_text: self.edited_text.clone(),
            timestamp: self.timestamp,
        }
    }
}
