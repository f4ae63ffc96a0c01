use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Duration, Utc};
use claimforge::dataset::Direction;
use claimforge::generate::{
    bridge_spans, complete, BridgeRequest, Candidate, ConstraintSet, ExtentLevel, GenerateError, GenerationRequest,
    SamplingConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::error::ApiError;
use crate::models::{CheckpointStatus, LoadedModels};
use crate::session::{Annotation, FeedbackAction, FeedbackEvent, HistoryItem, Session, StoredCandidate};
use crate::store::{Journal, JournalEntry};

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub session_id: String,
    pub context: String,
    pub direction: Direction,
    pub extent: ExtentLevel,
    pub k: usize,
    #[serde(default = "one")]
    pub lookahead: usize,
    #[serde(default)]
    pub constraints: ConstraintSet,
    #[serde(default)]
    pub sampling: SamplingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeApiRequest {
    pub session_id: String,
    #[serde(flatten)]
    pub bridge: BridgeRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub session_id: String,
    pub candidate_id: String,
    pub action: FeedbackAction,
    #[serde(default)]
    pub edited_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub loaded_checkpoints: Vec<CheckpointStatus>,
    pub vocab_hash: Option<String>,
}

struct Log {
    journal: Journal,
    /// Entries that survive compaction: live sessions plus all feedback.
    live: Vec<JournalEntry>,
}

pub struct AppState {
    pub config: ServiceConfig,
    models: RwLock<Arc<LoadedModels>>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
    annotations: Mutex<Vec<Annotation>>,
    log: Mutex<Log>,
    seq: AtomicU64,
}

impl AppState {
    /// Builds the state, replaying the journal when the config names one.
    pub fn new(config: ServiceConfig, models: LoadedModels) -> std::io::Result<Self> {
        let (journal, entries) = match &config.store_path {
            Some(p) => Journal::open(p)?,
            None => (Journal::in_memory(), Vec::new()),
        };
        let state = AppState {
            config,
            models: RwLock::new(Arc::new(models)),
            sessions: Mutex::new(HashMap::new()),
            annotations: Mutex::new(Vec::new()),
            log: Mutex::new(Log { journal, live: Vec::new() }),
            seq: AtomicU64::new(0),
        };
        state.replay(entries);
        Ok(state)
    }

    fn replay(&self, mut entries: Vec<JournalEntry>) {
        entries.sort_by_key(JournalEntry::seq);
        let mut sessions: HashMap<String, Session> = HashMap::new();
        let mut annotations = Vec::new();
        for e in &entries {
            match e {
                JournalEntry::SessionCreated { session_id, at, .. } => {
                    sessions.insert(session_id.clone(), Session::new(session_id.clone(), *at));
                }
                JournalEntry::Completed { seq, session_id, at, context, request, candidates } => {
                    if let Some(s) = sessions.get_mut(session_id) {
                        s.document = context.clone();
                        s.last_active = *at;
                        s.history.push(HistoryItem::Completion {
                            seq: *seq,
                            at: *at,
                            context: context.clone(),
                            request: request.clone(),
                            candidates: candidates.clone(),
                        });
                    }
                }
                JournalEntry::Feedback { annotation } => {
                    if let Some(s) = sessions.get_mut(&annotation.session_id) {
                        s.last_active = annotation.timestamp;
                        s.history.push(HistoryItem::Feedback { seq: annotation.seq, event: annotation.event() });
                    }
                    annotations.push(annotation.clone());
                }
                JournalEntry::SessionExpired { session_id, .. } => {
                    sessions.remove(session_id);
                }
            }
        }
        let live = entries.into_iter().filter(|e| survives(e, &sessions)).collect();
        let next = self.seq_hint(&annotations, &sessions);
        self.seq.store(next, Ordering::SeqCst);
        *self.annotations.lock().expect("annotations poisoned") = annotations;
        self.log.lock().expect("log poisoned").live = live;
        *self.sessions.lock().expect("sessions poisoned") =
            sessions.into_iter().map(|(k, v)| (k, Arc::new(tokio::sync::Mutex::new(v)))).collect();
    }

    fn seq_hint(&self, annotations: &[Annotation], sessions: &HashMap<String, Session>) -> u64 {
        let a = annotations.iter().map(|a| a.seq + 1).max().unwrap_or(0);
        let h = sessions
            .values()
            .flat_map(|s| s.history.iter())
            .map(|h| match h {
                HistoryItem::Completion { seq, .. } | HistoryItem::Feedback { seq, .. } => seq + 1,
            })
            .max()
            .unwrap_or(0);
        a.max(h).max(sessions.len() as u64)
    }

    fn next_seq(&self) -> u64 {
        self.seq.fetch_add(1, Ordering::SeqCst)
    }

    fn record(&self, entry: JournalEntry) -> Result<(), ApiError> {
        let mut log = self.log.lock().expect("log poisoned");
        log.journal.append(&entry).map_err(ApiError::internal)?;
        log.live.push(entry);
        if log.journal.appends_since_compaction() >= self.config.compact_every {
            let live = log.live.clone();
            log.journal.compact(&live).map_err(ApiError::internal)?;
        }
        Ok(())
    }

    /// The current model snapshot; a request keeps using the one it started with.
    pub fn models(&self) -> Arc<LoadedModels> {
        self.models.read().expect("models poisoned").clone()
    }

    pub fn swap_models(&self, models: LoadedModels) {
        *self.models.write().expect("models poisoned") = Arc::new(models);
    }

    fn ttl(&self) -> Duration {
        Duration::seconds(self.config.session_ttl_secs.min(i64::MAX as u64 / 1000) as i64)
    }

    pub fn create_session(&self) -> Result<String, ApiError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let at = Utc::now();
        self.record(JournalEntry::SessionCreated { seq: self.next_seq(), session_id: id.clone(), at })?;
        self.sessions
            .lock()
            .expect("sessions poisoned")
            .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(Session::new(id.clone(), at))));
        Ok(id)
    }

    fn handle(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .expect("sessions poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }

    /// Locks a live session; expired sessions are dropped and reported missing.
    async fn lock_session(&self, id: &str) -> Result<tokio::sync::OwnedMutexGuard<Session>, ApiError> {
        let guard = self.handle(id)?.lock_owned().await;
        if guard.last_active + self.ttl() < Utc::now() {
            drop(guard);
            self.expire(id)?;
            return Err(ApiError::not_found(format!("session {id} expired")));
        }
        Ok(guard)
    }

    pub async fn session(&self, id: &str) -> Result<Session, ApiError> {
        Ok(self.lock_session(id).await?.clone())
    }

    fn expire(&self, id: &str) -> Result<(), ApiError> {
        if self.sessions.lock().expect("sessions poisoned").remove(id).is_none() {
            return Ok(());
        }
        let entry = JournalEntry::SessionExpired { seq: self.next_seq(), session_id: id.to_string(), at: Utc::now() };
        let mut log = self.log.lock().expect("log poisoned");
        log.journal.append(&entry).map_err(ApiError::internal)?;
        log.live.retain(|e| !belongs_to(e, id));
        Ok(())
    }

    /// Drops sessions idle longer than the TTL as of `now`. Sessions with a
    /// request in flight are skipped. Returns how many were dropped.
    pub fn expire_idle(&self, now: DateTime<Utc>) -> Result<usize, ApiError> {
        let ttl = self.ttl();
        let stale: Vec<String> = self
            .sessions
            .lock()
            .expect("sessions poisoned")
            .iter()
            .filter(|(_, s)| s.try_lock().is_ok_and(|s| s.last_active + ttl < now))
            .map(|(id, _)| id.clone())
            .collect();
        for id in &stale {
            self.expire(id)?;
        }
        if !stale.is_empty() {
            let mut log = self.log.lock().expect("log poisoned");
            let live = log.live.clone();
            log.journal.compact(&live).map_err(ApiError::internal)?;
        }
        Ok(stale.len())
    }

    pub async fn complete(&self, req: CompleteRequest) -> Result<Vec<StoredCandidate>, ApiError> {
        let mut session = self.lock_session(&req.session_id).await?;
        let models = self.models();
        let set = models.set.clone().ok_or_else(|| ApiError::unavailable("no models loaded"))?;
        let gen = GenerationRequest {
            context_text: req.context.clone(),
            direction: req.direction,
            extent: req.extent,
            k: req.k,
            proximity_lookahead: req.lookahead,
            constraints: req.constraints.clone(),
            sampling: req.sampling,
            truncate_context: true,
        };
        let candidates = tokio::task::spawn_blocking(move || complete(&set, &gen))
            .await
            .map_err(ApiError::internal)?
            .map_err(ApiError::from)?;
        let request = serde_json::to_value(&req).map_err(ApiError::internal)?;
        self.store_completion(&mut session, req.context, request, candidates)
    }

    pub async fn bridge(&self, req: BridgeApiRequest) -> Result<Vec<StoredCandidate>, ApiError> {
        let mut session = self.lock_session(&req.session_id).await?;
        let models = self.models();
        let set = models.set.clone().ok_or_else(|| ApiError::unavailable("no models loaded"))?;
        let bridge = req.bridge.clone();
        let candidates = tokio::task::spawn_blocking(move || bridge_spans(&set, &bridge))
            .await
            .map_err(ApiError::internal)?
            .map_err(ApiError::from)?;
        let context = format!("{} … {}", req.bridge.left.trim(), req.bridge.right.trim());
        let request = serde_json::to_value(&req).map_err(ApiError::internal)?;
        self.store_completion(&mut session, context, request, candidates)
    }

    fn store_completion(
        &self,
        session: &mut Session,
        context: String,
        request: serde_json::Value,
        candidates: Vec<Candidate>,
    ) -> Result<Vec<StoredCandidate>, ApiError> {
        let seq = self.next_seq();
        let at = Utc::now();
        let stored: Vec<StoredCandidate> = candidates
            .into_iter()
            .map(|c| StoredCandidate::new(uuid::Uuid::new_v4().simple().to_string(), c))
            .collect();
        self.record(JournalEntry::Completed {
            seq,
            session_id: session.session_id.clone(),
            at,
            context: context.clone(),
            request: request.clone(),
            candidates: stored.clone(),
        })?;
        session.document = context.clone();
        session.last_active = at;
        session.history.push(HistoryItem::Completion { seq, at, context, request, candidates: stored.clone() });
        Ok(stored)
    }

    pub async fn feedback(&self, req: FeedbackRequest) -> Result<(), ApiError> {
        match (req.action, &req.edited_text) {
            (FeedbackAction::Edited, None) => return Err(ApiError::unprocessable("Edited feedback needs edited_text")),
            (FeedbackAction::Accepted | FeedbackAction::Rejected, Some(_)) => {
                return Err(ApiError::unprocessable("edited_text is only allowed with Edited"))
            }
            _ => {}
        }
        let mut session = self.lock_session(&req.session_id).await?;
        let (context, candidate) = session
            .find_candidate(&req.candidate_id)
            .map(|(ctx, c)| (ctx.to_string(), c.text.clone()))
            .ok_or_else(|| ApiError::not_found(format!("candidate {} is not from this session", req.candidate_id)))?;
        let annotation = Annotation {
            seq: self.next_seq(),
            session_id: req.session_id.clone(),
            candidate_id: req.candidate_id.clone(),
            context,
            candidate,
            action: req.action,
            edited_text: req.edited_text.clone(),
            timestamp: Utc::now(),
        };
        self.record(JournalEntry::Feedback { annotation: annotation.clone() })?;
        session.last_active = annotation.timestamp;
        session.history.push(HistoryItem::Feedback { seq: annotation.seq, event: annotation.event() });
        self.annotations.lock().expect("annotations poisoned").push(annotation);
        Ok(())
    }

    /// Annotations strictly after `since`, ordered by timestamp.
    pub fn annotations(&self, since: Option<DateTime<Utc>>) -> Vec<Annotation> {
        let mut out: Vec<Annotation> = self
            .annotations
            .lock()
            .expect("annotations poisoned")
            .iter()
            .filter(|a| since.is_none_or(|t| a.timestamp > t))
            .cloned()
            .collect();
        out.sort_by_key(|a| (a.timestamp, a.seq));
        out
    }

    pub fn health(&self) -> Health {
        let m = self.models();
        Health {
            status: if m.healthy() { "ok" } else { "degraded" },
            loaded_checkpoints: m.checkpoints.clone(),
            vocab_hash: m.vocab_hash().map(str::to_string),
        }
    }
}

fn belongs_to(e: &JournalEntry, id: &str) -> bool {
    match e {
        JournalEntry::SessionCreated { session_id, .. }
        | JournalEntry::Completed { session_id, .. }
        | JournalEntry::SessionExpired { session_id, .. } => session_id == id,
        JournalEntry::Feedback { .. } => false,
    }
}

fn survives(e: &JournalEntry, live: &HashMap<String, Session>) -> bool {
    match e {
        JournalEntry::SessionCreated { session_id, .. } | JournalEntry::Completed { session_id, .. } => {
            live.contains_key(session_id)
        }
        JournalEntry::Feedback { .. } => true,
        JournalEntry::SessionExpired { .. } => false,
    }
}

impl From<GenerateError> for ApiError {
    fn from(e: GenerateError) -> Self {
        let msg = e.to_string();
        match e {
            GenerateError::InvalidRequest(_) | GenerateError::ContextTooLong { .. } => ApiError::unprocessable(msg),
            GenerateError::InfeasibleConstraints { .. } | GenerateError::NoCandidates | GenerateError::NoBridgeFound => {
                ApiError::conflict(&code_of(&e), msg)
            }
            GenerateError::ModelNotLoaded(_) | GenerateError::VocabHashMismatch(_) => ApiError::unavailable(msg),
            GenerateError::Model(_) | GenerateError::Measure(_) => ApiError::internal(msg),
        }
    }
}

fn code_of(e: &GenerateError) -> String {
    match e {
        GenerateError::InfeasibleConstraints { .. } => "infeasible_constraints",
        GenerateError::NoCandidates => "no_candidates",
        GenerateError::NoBridgeFound => "no_bridge_found",
        _ => "conflict",
    }
    .to_string()
}

#[allow(dead_code)]
fn _assert_send_sync() {
    fn f<T: Send + Sync>() {}
    f::<AppState>();
    f::<FeedbackEvent>();
}
