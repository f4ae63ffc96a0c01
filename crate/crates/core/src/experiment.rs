//! Slow-motion fine-tuning: move a decoder from one patent set toward
//! another in short segments, and after each segment generate claims and
//! count the CPC sections the classifier assigns to them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{load_corpus, CorpusError, CpcSection, PatentRecord};
use crate::dataset::{build_records, encode_records, DatasetError, Direction, EncodedDataset, RecordFormat, Vocabulary};
use crate::generate::{sample_texts, GenerateError, SamplingConfig, SamplingStrategy};
use crate::measure::{label_distribution_of, JointCounts, LabelDistribution, MeasureError, DEFAULT_THRESHOLD};
use crate::nn::{load_checkpoint, save_checkpoint, train_lm, Checkpoint, DecoderLm, EncoderClassifier, NnError, TrainConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("selector matched no patents")]
    EmptySelection,
    #[error("selector both requires and forbids {0}")]
    ConflictingSelector(CpcSection),
    #[error("run directory belongs to spec {found}, not {expected}")]
    ResumeMismatch { expected: String, found: String },
    #[error("trend analysis needs at least 2 checkpoints, got {0}")]
    TooFewCheckpoints(usize),
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("malformed metrics file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetSelector {
    #[serde(default)]
    pub require_sections: BTreeSet<CpcSection>,
    #[serde(default)]
    pub forbid_sections: BTreeSet<CpcSection>,
}

impl SetSelector {
    pub fn new(require: &[CpcSection], forbid: &[CpcSection]) -> Self {
        SetSelector { require_sections: require.iter().copied().collect(), forbid_sections: forbid.iter().copied().collect() }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        match self.require_sections.intersection(&self.forbid_sections).next() {
            Some(&s) => Err(ExperimentError::ConflictingSelector(s)),
            None => Ok(()),
        }
    }

    pub fn matches(&self, record: &PatentRecord) -> bool {
        self.require_sections.is_subset(&record.cpc_sections)
            && self.forbid_sections.is_disjoint(&record.cpc_sections)
    }
}

pub fn select_sets(corpus: &[PatentRecord], sel: &SetSelector) -> Result<Vec<PatentRecord>, ExperimentError> {
    sel.validate()?;
    let out: Vec<PatentRecord> = corpus.iter().filter(|r| sel.matches(r)).cloned().collect();
    if out.is_empty() {
        return Err(ExperimentError::EmptySelection);
    }
    Ok(out)
}

fn default_steps() -> u64 {
    10
}

fn default_claims() -> usize {
    512
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

/// Generation settings used when a spec does not give any.
pub fn default_sampling() -> SamplingConfig {
    SamplingConfig { strategy: SamplingStrategy::Temperature, top_k: 40, temperature: 1.0, max_tokens: 63, seed: 0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub base_checkpoint: PathBuf,
    pub classifier_checkpoint: PathBuf,
    pub vocabulary: PathBuf,
    /// Corpus JSONL holding the target (S2) patents.
    pub corpus: PathBuf,
    pub s1: SetSelector,
    pub s2: SetSelector,
    #[serde(default = "default_steps")]
    pub steps_per_segment: u64,
    pub n_segments: usize,
    #[serde(default = "default_claims")]
    pub claims_per_checkpoint: usize,
    #[serde(default = "default_sampling")]
    pub sampling: SamplingConfig,
    pub train: TrainConfig,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.s1.validate()?;
        self.s2.validate()?;
        if self.steps_per_segment == 0 || self.claims_per_checkpoint == 0 {
            return Err(ExperimentError::InvalidSpec("steps_per_segment and claims_per_checkpoint must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(ExperimentError::InvalidSpec("threshold must lie in [0, 1]".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    /// SHA-256 of the spec's JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub spec_hash: String,
    pub segment: usize,
    /// Fine-tuning steps taken since the base checkpoint.
    pub step: u64,
    pub generated: usize,
    pub label_counts: LabelDistribution,
    pub joint_counts: JointCounts,
}

/// Everything a run needs, already in memory.
pub struct ExperimentInputs {
    pub base: DecoderLm,
    pub classifier: EncoderClassifier,
    pub vocab: Vocabulary,
    pub target: EncodedDataset,
}

impl ExperimentInputs {
    /// Loads the files named by the spec and encodes the S2 selection.
    pub fn load(spec: &ExperimentSpec) -> Result<Self, ExperimentError> {
        let vocab = Vocabulary::load(&spec.vocabulary)?;
        let base = load_checkpoint(&spec.base_checkpoint)?.into_decoder()?;
        let classifier = load_checkpoint(&spec.classifier_checkpoint)?.into_classifier()?;
        let (_, corpus) = load_corpus(&spec.corpus)?;
        let target = select_sets(&corpus, &spec.s2)?;
        let records = build_records(&target, RecordFormat::DependentAlone)?;
        let data = encode_records(&records, &vocab, base.config().context_len);
        Ok(ExperimentInputs { base, classifier, vocab, target: data })
    }
}

const SPEC_FILE: &str = "spec.json";
const METRICS_FILE: &str = "metrics.jsonl";

fn checkpoint_path(dir: &Path, segment: usize) -> PathBuf {
    dir.join(format!("segment-{segment:04}.ckpt"))
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<CheckpointMetrics>, ExperimentError> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ExperimentError::Malformed(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

fn measure(
    model: &DecoderLm,
    inputs: &ExperimentInputs,
    spec: &ExperimentSpec,
    spec_hash: &str,
    segment: usize,
    step: u64,
) -> Result<CheckpointMetrics, ExperimentError> {
    let stream_base = (segment as u64) << 32;
    let texts = sample_texts(model, &inputs.vocab, "", Direction::Forward, spec.claims_per_checkpoint, &spec.sampling, stream_base)?;
    let (label_counts, joint_counts, _) = label_distribution_of(&inputs.classifier, &inputs.vocab, &texts, spec.threshold)?;
    Ok(CheckpointMetrics { spec_hash: spec_hash.to_string(), segment, step, generated: texts.len(), label_counts, joint_counts })
}

/// Runs (or resumes) the schedule in `out_dir`: a baseline at step 0, then
/// `n_segments` rounds of fine-tuning plus measurement. Each completed
/// segment appends one metrics row and leaves a checkpoint behind, so an
/// interrupted run picks up after its last row.
pub fn run_slow_motion(
    spec: &ExperimentSpec,
    inputs: &ExperimentInputs,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<CheckpointMetrics>, ExperimentError> {
    spec.validate()?;
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let hash = spec.hash();
    let spec_path = dir.join(SPEC_FILE);
    if spec_path.exists() {
        let existing: ExperimentSpec = serde_json::from_str(&fs::read_to_string(&spec_path)?)
            .map_err(|e| ExperimentError::Malformed(e.to_string()))?;
        if existing.hash() != hash {
            return Err(ExperimentError::ResumeMismatch { expected: hash, found: existing.hash() });
        }
    } else {
        fs::write(&spec_path, serde_json::to_string_pretty(spec).expect("spec serializes"))?;
    }
    let metrics_path = dir.join(METRICS_FILE);
    let mut metrics = read_metrics(&metrics_path)?;
    if let Some(bad) = metrics.iter().find(|m| m.spec_hash != hash) {
        return Err(ExperimentError::ResumeMismatch { expected: hash, found: bad.spec_hash.clone() });
    }
    inputs.base.check_vocab(inputs.vocab.hash())?;
    inputs.classifier.check_vocab(inputs.vocab.hash())?;

    let mut model = match metrics.last() {
        Some(last) if last.segment > 0 => load_checkpoint(checkpoint_path(dir, last.segment))?.into_decoder()?,
        _ => inputs.base.clone(),
    };
    let base_step = inputs.base.step();
    let mut sink = OpenOptions::new().create(true).append(true).open(&metrics_path)?;
    let mut append = |m: &CheckpointMetrics| -> Result<(), ExperimentError> {
        writeln!(sink, "{}", serde_json::to_string(m).expect("metrics serialize"))?;
        sink.flush()?;
        Ok(())
    };
    if metrics.is_empty() {
        let m = measure(&model, inputs, spec, &hash, 0, 0)?;
        append(&m)?;
        metrics.push(m);
    }
    let done = metrics.last().map_or(0, |m| m.segment);
    let tc = TrainConfig { max_steps: spec.steps_per_segment, ..spec.train.clone() };
    for segment in done + 1..=spec.n_segments {
        train_lm(&mut model, &inputs.target, &tc)?;
        save_checkpoint(&Checkpoint::Decoder(model.clone()), checkpoint_path(dir, segment))?;
        let m = measure(&model, inputs, spec, &hash, segment, model.step() - base_step)?;
        append(&m)?;
        metrics.push(m);
    }
    Ok(metrics)
}

/// Convenience wrapper: load inputs from the spec's paths and run.
pub fn run_slow_motion_from_files(spec: &ExperimentSpec, out_dir: impl AsRef<Path>) -> Result<Vec<CheckpointMetrics>, ExperimentError> {
    let inputs = ExperimentInputs::load(spec)?;
    run_slow_motion(spec, &inputs, out_dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionTrend {
    pub delta_first_to_last: i64,
    /// `None` with fewer than three checkpoints.
    pub spearman_rho_vs_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub sections: BTreeMap<CpcSection, SectionTrend>,
    pub joint: BTreeMap<String, SectionTrend>,
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman correlation; 0 when either series is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

fn trend(steps: &[f64], counts: &[u64]) -> SectionTrend {
    let ys: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    SectionTrend {
        delta_first_to_last: counts[counts.len() - 1] as i64 - counts[0] as i64,
        spearman_rho_vs_step: (counts.len() >= 3).then(|| spearman(steps, &ys)),
    }
}

pub fn analyze_trend(metrics: &[CheckpointMetrics]) -> Result<TrendReport, ExperimentError> {
    if metrics.len() < 2 {
        return Err(ExperimentError::TooFewCheckpoints(metrics.len()));
    }
    let steps: Vec<f64> = metrics.iter().map(|m| m.step as f64).collect();
    let sections = CpcSection::ALL
        .iter()
        .map(|&s| (s, trend(&steps, &metrics.iter().map(|m| m.label_counts.get(s)).collect::<Vec<_>>())))
        .collect();
    let keys: BTreeSet<&String> = metrics.iter().flat_map(|m| m.joint_counts.keys()).collect();
    let joint = keys
        .into_iter()
        .map(|k| {
            let counts: Vec<u64> = metrics.iter().map(|m| m.joint_counts.get(k).copied().unwrap_or(0)).collect();
            (k.clone(), trend(&steps, &counts))
        })
        .collect();
    Ok(TrendReport { sections, joint })
}

/// One row per checkpoint: step, then a count column per section.
pub fn metrics_to_csv(metrics: &[CheckpointMetrics]) -> String {
    let mut out = String::from("segment,step,generated");
    for s in CpcSection::ALL {
        out.push_str(&format!(",{}", s.letter()));
    }
    out.push('\n');
    for m in metrics {
        out.push_str(&format!("{},{},{}", m.segment, m.step, m.generated));
        for s in CpcSection::ALL {
            out.push_str(&format!(",{}", m.label_counts.get(s)));
        }
        out.push('\n');
    }
    out
}
