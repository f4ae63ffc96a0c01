//! Append-only JSONL journal of session and feedback events.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::session::{Annotation, StoredCandidate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalEntry {
    SessionCreated {
        seq: u64,
        session_id: String,
        at: DateTime<Utc>,
    },
    Completed {
        seq: u64,
        session_id: String,
        at: DateTime<Utc>,
        context: String,
        request: serde_json::Value,
        candidates: Vec<StoredCandidate>,
    },
    Feedback {
        annotation: Annotation,
    },
    SessionExpired {
        seq: u64,
        session_id: String,
        at: DateTime<Utc>,
    },
}

impl JournalEntry {
    pub fn seq(&self) -> u64 {
        match self {
            JournalEntry::SessionCreated { seq, .. }
            | JournalEntry::Completed { seq, .. }
            | JournalEntry::SessionExpired { seq, .. } => *seq,
            JournalEntry::Feedback { annotation } => annotation.seq,
        }
    }
}

/// A journal file, or nothing at all for in-memory services.
#[derive(Debug)]
pub struct Journal {
    path: Option<PathBuf>,
    file: Option<BufWriter<File>>,
    since_compaction: usize,
}

impl Journal {
    pub fn in_memory() -> Self {
        Journal { path: None, file: None, since_compaction: 0 }
    }

    /// Opens (creating if needed) the journal and returns its entries. A
    /// torn final line from a crash is ignored.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<(Self, Vec<JournalEntry>)> {
        let path = path.as_ref().to_path_buf();
        let mut entries = Vec::new();
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(&path)?).lines().collect::<Result<_, _>>()?;
            let last = lines.len().saturating_sub(1);
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str(line) {
                    Ok(e) => entries.push(e),
                    Err(e) if i == last => tracing::warn!(error = %e, "dropping torn journal line"),
                    Err(e) => return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok((Journal { path: Some(path), file: Some(BufWriter::new(file)), since_compaction: 0 }, entries))
    }

    pub fn append(&mut self, entry: &JournalEntry) -> std::io::Result<()> {
        self.since_compaction += 1;
        let Some(f) = self.file.as_mut() else { return Ok(()) };
        serde_json::to_writer(&mut *f, entry)?;
        f.write_all(b"\n")?;
        f.flush()
    }

    pub fn appends_since_compaction(&self) -> usize {
        self.since_compaction
    }

    /// Replaces the journal with `entries` via a temp file and rename.
    pub fn compact(&mut self, entries: &[JournalEntry]) -> std::io::Result<()> {
        self.since_compaction = 0;
        let Some(path) = self.path.clone() else { return Ok(()) };
        let tmp = path.with_extension("compacting");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            for e in entries {
                serde_json::to_writer(&mut w, e)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        self.file = None;
        fs::rename(&tmp, &path)?;
        self.file = Some(BufWriter::new(OpenOptions::new().append(true).open(&path)?));
        Ok(())
    }
}
