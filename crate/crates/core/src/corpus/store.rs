use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, CorpusSpec, PatentRecord};

pub const CORPUS_SCHEMA_VERSION: u64 = 1;

#[derive(Serialize)]
struct HeaderOut<'a> {
    schema_version: u64,
    spec: &'a CorpusSpec,
}

#[derive(Deserialize)]
struct HeaderIn {
    schema_version: u64,
    spec: serde_json::Value,
}

/// Writes the header line followed by one record per line.
pub fn write_corpus<W: Write>(
    mut out: W,
    spec: &CorpusSpec,
    records: &[PatentRecord],
) -> Result<(), CorpusError> {
    let to_io = |e: serde_json::Error| CorpusError::Io(e.into());
    let header = HeaderOut {
        schema_version: CORPUS_SCHEMA_VERSION,
        spec,
    };
    serde_json::to_writer(&mut out, &header).map_err(to_io)?;
    out.write_all(b"\n")?;
    for rec in records {
        serde_json::to_writer(&mut out, rec).map_err(to_io)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_corpus<R: BufRead>(input: R) -> Result<(CorpusSpec, Vec<PatentRecord>), CorpusError> {
    let mut lines = input.lines().enumerate();
    let (_, first) = lines.next().ok_or(CorpusError::Malformed {
        line: 1,
        message: "empty corpus file".into(),
    })?;
    let header: HeaderIn = serde_json::from_str(&first?).map_err(|e| CorpusError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    if header.schema_version != CORPUS_SCHEMA_VERSION {
        return Err(CorpusError::SchemaVersionMismatch {
            found: header.schema_version,
            expected: CORPUS_SCHEMA_VERSION,
        });
    }
    let spec: CorpusSpec = serde_json::from_value(header.spec).map_err(|e| CorpusError::Malformed {
        line: 1,
        message: e.to_string(),
    })?;
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok((spec, records))
}

pub fn persist_corpus(
    path: impl AsRef<Path>,
    spec: &CorpusSpec,
    records: &[PatentRecord],
) -> Result<(), CorpusError> {
    write_corpus(BufWriter::new(File::create(path)?), spec, records)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<(CorpusSpec, Vec<PatentRecord>), CorpusError> {
    read_corpus(BufReader::new(File::open(path)?))
}
