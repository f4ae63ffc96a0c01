//! Binary checkpoint container: magic, little-endian u64 header length, JSON
//! header, then raw little-endian f64 arrays (parameters, then Adam moments).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model::{ClassifierMode, DecoderLm, EncoderClassifier};
use super::params::{Layout, TensorSpec};
use super::train::AdamState;
use super::{ModelConfig, ModelKind, NnError};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CLFGCKPT";

#[derive(Debug, Clone)]
pub enum Checkpoint {
    Decoder(DecoderLm),
    Classifier(EncoderClassifier),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    kind: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<ClassifierMode>,
    config: ModelConfig,
    step: u64,
    rng_state: RngState,
    vocab_hash: String,
    optimizer: Option<AdamState>,
    tensors: Vec<TensorSpec>,
}

fn kind_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Decoder => "decoder",
        ModelKind::Classifier => "classifier",
    }
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        match self {
            Checkpoint::Decoder(_) => ModelKind::Decoder,
            Checkpoint::Classifier(_) => ModelKind::Classifier,
        }
    }

    pub fn vocab_hash(&self) -> &str {
        match self {
            Checkpoint::Decoder(m) => m.vocab_hash(),
            Checkpoint::Classifier(m) => m.vocab_hash(),
        }
    }

    pub fn step(&self) -> u64 {
        match self {
            Checkpoint::Decoder(m) => m.step(),
            Checkpoint::Classifier(m) => m.step(),
        }
    }

    pub fn decoder(&self) -> Result<&DecoderLm, NnError> {
        match self {
            Checkpoint::Decoder(m) => Ok(m),
            other => Err(NnError::WrongModelKind { found: kind_name(other.kind()), expected: "decoder" }),
        }
    }

    pub fn classifier(&self) -> Result<&EncoderClassifier, NnError> {
        match self {
            Checkpoint::Classifier(m) => Ok(m),
            other => Err(NnError::WrongModelKind { found: kind_name(other.kind()), expected: "classifier" }),
        }
    }

    pub fn into_decoder(self) -> Result<DecoderLm, NnError> {
        match self {
            Checkpoint::Decoder(m) => Ok(m),
            other => Err(NnError::WrongModelKind { found: kind_name(other.kind()), expected: "decoder" }),
        }
    }

    pub fn into_classifier(self) -> Result<EncoderClassifier, NnError> {
        match self {
            Checkpoint::Classifier(m) => Ok(m),
            other => Err(NnError::WrongModelKind { found: kind_name(other.kind()), expected: "classifier" }),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), NnError> {
        let (header, params, opt) = match self {
            Checkpoint::Decoder(m) => (
                Header {
                    schema_version: CHECKPOINT_SCHEMA_VERSION,
                    kind: ModelKind::Decoder,
                    mode: None,
                    config: m.config,
                    step: m.step,
                    rng_state: RngState { seed: m.rng_seed, step: m.step },
                    vocab_hash: m.vocab_hash.clone(),
                    optimizer: m.optimizer.clone(),
                    tensors: m.layout.tensors.clone(),
                },
                &m.params,
                &m.optimizer,
            ),
            Checkpoint::Classifier(m) => (
                Header {
                    schema_version: CHECKPOINT_SCHEMA_VERSION,
                    kind: ModelKind::Classifier,
                    mode: Some(m.mode),
                    config: m.config,
                    step: m.step,
                    rng_state: RngState { seed: m.rng_seed, step: m.step },
                    vocab_hash: m.vocab_hash.clone(),
                    optimizer: m.optimizer.clone(),
                    tensors: m.layout.tensors.clone(),
                },
                &m.params,
                &m.optimizer,
            ),
        };
        let json = serde_json::to_vec(&header).map_err(|e| NnError::MalformedCheckpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        write_f64s(&mut w, params)?;
        if let Some(state) = opt {
            write_f64s(&mut w, &state.m)?;
            write_f64s(&mut w, &state.v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, NnError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NnError::MalformedCheckpoint("bad magic".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 30 {
            return Err(NnError::MalformedCheckpoint(format!("header length {len}")));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json)?;
        let mut header: Header =
            serde_json::from_slice(&json).map_err(|e| NnError::MalformedCheckpoint(e.to_string()))?;
        if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(NnError::SchemaVersionMismatch { found: header.schema_version, expected: CHECKPOINT_SCHEMA_VERSION });
        }
        header.config.validate()?;
        let labels = match (header.kind, header.mode) {
            (ModelKind::Decoder, None) => None,
            (ModelKind::Classifier, Some(mode)) => Some(mode.num_labels()),
            _ => return Err(NnError::MalformedCheckpoint("model kind and mode disagree".into())),
        };
        let layout = Layout::new(&header.config, labels);
        if layout.tensors != header.tensors {
            return Err(NnError::MalformedCheckpoint("tensor table does not match config".into()));
        }
        let params = read_f64s(&mut r, layout.total)?;
        let optimizer = match header.optimizer.take() {
            Some(mut state) => {
                state.m = read_f64s(&mut r, layout.total)?;
                state.v = read_f64s(&mut r, layout.total)?;
                Some(state)
            }
            None => None,
        };
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(NnError::MalformedCheckpoint("trailing bytes".into()));
        }
        let layout = Arc::new(layout);
        Ok(match header.mode {
            None => Checkpoint::Decoder(DecoderLm {
                config: header.config,
                layout,
                params,
                vocab_hash: header.vocab_hash,
                step: header.step,
                rng_seed: header.rng_state.seed,
                optimizer,
            }),
            Some(mode) => Checkpoint::Classifier(EncoderClassifier {
                config: header.config,
                mode,
                layout,
                params,
                vocab_hash: header.vocab_hash,
                step: header.step,
                rng_seed: header.rng_state.seed,
                optimizer,
            }),
        })
    }
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<(), NnError> {
    c.write_to(BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, NnError> {
    Checkpoint::read_from(BufReader::new(File::open(path)?))
}
