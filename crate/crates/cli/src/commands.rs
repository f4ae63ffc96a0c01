use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::Utc;
use claimforge::claim::{check_antecedent_basis, parse_claim_block, split_spans};
use claimforge::corpus::{
    build_corpus, load_corpus, persist_corpus, ApiClient, BulkClaimSource, ClaimSource, CorpusSpec, CpcSection,
    HttpTransport, InventorQuery, NoClaims, RecordingTransport, ReplayTransport,
};
use claimforge::dataset::{
    build_records, encode_records, read_records, split_train_val, with_direction, write_records, Direction, RecordFormat,
    Vocabulary,
};
use claimforge::experiment::{analyze_trend, metrics_to_csv, read_metrics, run_slow_motion_from_files, ExperimentSpec};
use claimforge::generate::{complete, ConstraintSet, GenerationRequest, ModelSet, SamplingConfig};
use claimforge::measure::{
    classify_cpc, cpc_examples, cpc_probabilities, encode_relevancy_examples, relevancy_pairs, score_span_relevancy,
    SpanPair,
};
use claimforge::nn::{
    gradient_check, load_checkpoint, save_checkpoint, train_classifier, train_lm, Checkpoint, ClassifierMode, DecoderLm,
    EncoderClassifier, ModelConfig, ModelKind, TrainConfig,
};
use claimforge::synth::synth_patents;
use serde_json::{json, Value};

use super::*;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Parse { file, patent_id } => parse(file.as_deref(), &patent_id),
        Command::Corpus(CorpusCmd::Build { spec, replay, base_url, record, claims, out }) => {
            corpus_build(&spec, replay.as_deref(), base_url, record.as_deref(), claims.as_deref(), &out)
        }
        Command::Corpus(CorpusCmd::Stats { corpus }) => corpus_stats(&corpus),
        Command::Dataset(DatasetCmd::Build { corpus, format, vocab_size, val_fraction, seed, out_dir }) => {
            dataset_build(&corpus, format, vocab_size, val_fraction, seed, &out_dir)
        }
        Command::Train(TrainCmd::Lm { vocab, records, direction, model, train, out }) => {
            train_lm_cmd(&vocab, &records, direction, &model, &train, &out)
        }
        Command::Train(TrainCmd::Classifier { vocab, corpus, mode, model, train, out }) => {
            train_classifier_cmd(&vocab, &corpus, mode, &model, &train, &out)
        }
        Command::Finetune { checkpoint, vocab, records, train, out } => finetune(&checkpoint, &vocab, &records, &train, &out),
        Command::Gradcheck { kind, seed } => gradcheck(kind, seed),
        Command::Complete(args) => complete_cmd(&args),
        Command::Measure { checkpoint, vocab, mode, input, out, threshold } => {
            measure(&checkpoint, &vocab, mode, &input, &out, threshold)
        }
        Command::Experiment(ExperimentCmd::SlowMotion { spec, out }) => slow_motion(&spec, &out),
        Command::Experiment(ExperimentCmd::Trend { metrics, csv }) => trend(&metrics, csv.as_deref()),
        Command::Serve { config } => serve(config.as_deref()),
        Command::Synth { sections, n, seed, mixed, out } => synth(&sections, n, seed, mixed, &out),
    }
}

/// A closed stdout (e.g. piped into `head`) is not an error.
fn print_json(v: &impl serde::Serialize) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(v)?) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn parse(file: Option<&Path>, patent_id: &str) -> Result<()> {
    let raw = match file {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let claims = parse_claim_block(patent_id, &raw)?;
    let mut out_claims = Vec::new();
    let mut reports = Vec::new();
    for c in &claims {
        let parsed = split_spans(c)?;
        out_claims.push(json!({
            "number": c.number,
            "depends_on": c.depends_on,
            "text": c.text,
            "spans": parsed.spans,
        }));
        reports.push(json!({ "number": c.number, "violations": check_antecedent_basis(&c.text).violations }));
    }
    print_json(&json!({ "claims": out_claims, "antecedent_reports": reports }))
}

fn corpus_build(
    spec_path: &Path,
    replay: Option<&Path>,
    base_url: Option<String>,
    record: Option<&Path>,
    claims: Option<&Path>,
    out: &Path,
) -> Result<()> {
    // fetched_at is overwritten by the build, so the file may leave it out.
    let mut raw: serde_json::Map<String, Value> = serde_json::from_str(&fs::read_to_string(spec_path)?)?;
    raw.entry("fetched_at").or_insert_with(|| json!(Utc::now()));
    let spec: CorpusSpec = serde_json::from_value(Value::Object(raw)).context("invalid corpus spec")?;
    let claims: Box<dyn ClaimSource> = match claims {
        Some(p) => Box::new(BulkClaimSource::from_file(p)?),
        None => Box::new(NoClaims),
    };
    let (built, records) = match (replay, base_url) {
        (Some(r), _) => {
            let client = ApiClient::new(Arc::new(ReplayTransport::from_file(r)?));
            build_corpus(&spec, &client, claims.as_ref())?
        }
        (None, Some(url)) => {
            let recorder = Arc::new(RecordingTransport::new(HttpTransport::new(url)?));
            let client = ApiClient::new(recorder.clone());
            let result = build_corpus(&spec, &client, claims.as_ref())?;
            if let Some(path) = record {
                recorder.save(path, result.0.fetched_at)?;
            }
            result
        }
        (None, None) => bail!("pass --replay or --base-url"),
    };
    persist_corpus(out, &built, &records)?;
    eprintln!("wrote {} patents to {}", records.len(), out.display());
    Ok(())
}

fn corpus_stats(path: &Path) -> Result<()> {
    let (spec, records) = load_corpus(path)?;
    let mut sections = std::collections::BTreeMap::new();
    for r in &records {
        for s in &r.cpc_sections {
            *sections.entry(s.to_string()).or_insert(0u64) += 1;
        }
    }
    let claims: usize = records.iter().map(|r| r.claims.len()).sum();
    print_json(&json!({
        "patents": records.len(),
        "claims": claims,
        "sections": sections,
        "citation_depth": spec.citation_depth,
        "fetched_at": spec.fetched_at,
    }))
}

fn record_format(f: Format) -> RecordFormat {
    match f {
        Format::DependentAlone => RecordFormat::DependentAlone,
        Format::IndependentPrepended => RecordFormat::IndependentPrepended,
    }
}

fn direction(d: Dir) -> Direction {
    match d {
        Dir::Forward => Direction::Forward,
        Dir::Backward => Direction::Backward,
    }
}

fn dataset_build(corpus: &Path, format: Format, vocab_size: usize, val: f64, seed: u64, out_dir: &Path) -> Result<()> {
    let (_, patents) = load_corpus(corpus)?;
    let records = build_records(&patents, record_format(format))?;
    let (train, valid) = split_train_val(&records, val, seed)?;
    let texts: Vec<&str> = train.iter().map(|r| r.text.as_str()).collect();
    let vocab = Vocabulary::train(&texts, vocab_size)?;
    fs::create_dir_all(out_dir)?;
    vocab.save(out_dir.join("vocab.json"))?;
    for (name, set) in [("train", &train), ("val", &valid)] {
        for d in [Direction::Forward, Direction::Backward] {
            let tag = if d == Direction::Forward { "forward" } else { "backward" };
            write_records(out_dir.join(format!("{name}_{tag}.jsonl")), &with_direction(set, d))?;
        }
    }
    eprintln!(
        "{} train / {} val records, vocabulary of {} tokens ({})",
        train.len(),
        valid.len(),
        vocab.len(),
        vocab.hash()
    );
    Ok(())
}

fn model_config(m: &ModelArgs, vocab_size: usize) -> ModelConfig {
    ModelConfig {
        n_layers: m.n_layers,
        n_heads: m.n_heads,
        d_model: m.d_model,
        d_ff: m.d_ff,
        context_len: m.context_len,
        vocab_size,
        seed: m.model_seed,
    }
}

fn train_config(t: &TrainArgs) -> TrainConfig {
    TrainConfig { learning_rate: t.lr, batch_size: t.batch_size, max_steps: t.steps, seed: t.seed, ..TrainConfig::default() }
}

fn report_losses(trace: &[f64]) {
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        eprintln!("{} steps, loss {first:.4} -> {last:.4}", trace.len());
    }
}

fn train_lm_cmd(vocab: &Path, records: &Path, dir: Dir, m: &ModelArgs, t: &TrainArgs, out: &Path) -> Result<()> {
    let vocab = Vocabulary::load(vocab)?;
    let records = with_direction(&read_records(records)?, direction(dir));
    let cfg = model_config(m, vocab.len());
    let data = encode_records(&records, &vocab, cfg.context_len);
    let mut model = DecoderLm::new(cfg, vocab.hash())?;
    let report = train_lm(&mut model, &data, &train_config(t))?;
    report_losses(&report.loss_trace);
    save_checkpoint(&Checkpoint::Decoder(model), out)?;
    Ok(())
}

fn classifier_mode(m: MeasureMode) -> ClassifierMode {
    match m {
        MeasureMode::Cpc => ClassifierMode::Cpc,
        MeasureMode::Relevancy => ClassifierMode::Relevancy,
    }
}

fn train_classifier_cmd(vocab: &Path, corpus: &Path, mode: MeasureMode, m: &ModelArgs, t: &TrainArgs, out: &Path) -> Result<()> {
    let vocab = Vocabulary::load(vocab)?;
    let (_, patents) = load_corpus(corpus)?;
    let cfg = model_config(m, vocab.len());
    let examples = match mode {
        MeasureMode::Cpc => cpc_examples(&patents, &vocab, cfg.context_len),
        MeasureMode::Relevancy => encode_relevancy_examples(&relevancy_pairs(&patents, t.seed), &vocab, cfg.context_len),
    };
    let mut model = EncoderClassifier::new(cfg, classifier_mode(mode), vocab.hash())?;
    let report = train_classifier(&mut model, &examples, &train_config(t))?;
    report_losses(&report.loss_trace);
    save_checkpoint(&Checkpoint::Classifier(model), out)?;
    Ok(())
}

fn finetune(checkpoint: &Path, vocab: &Path, records: &Path, t: &TrainArgs, out: &Path) -> Result<()> {
    let vocab = Vocabulary::load(vocab)?;
    let mut model = load_checkpoint(checkpoint)?.into_decoder()?;
    let records = read_records(records)?;
    let data = encode_records(&records, &vocab, model.config().context_len);
    let report = train_lm(&mut model, &data, &train_config(t))?;
    report_losses(&report.loss_trace);
    save_checkpoint(&Checkpoint::Decoder(model), out)?;
    Ok(())
}

fn gradcheck(kind: Kind, seed: u64) -> Result<()> {
    let kind = match kind {
        Kind::Decoder => ModelKind::Decoder,
        Kind::Classifier => ModelKind::Classifier,
    };
    let report = gradient_check(kind, ModelConfig::tiny(24).with_seed(seed))?;
    print_json(&report)
}

fn complete_cmd(a: &CompleteArgs) -> Result<()> {
    let vocab = Arc::new(Vocabulary::load(&a.vocab)?);
    let mut models = ModelSet::new(vocab);
    if let Some(p) = &a.checkpoint {
        models = models.with_forward(load_checkpoint(p)?.into_decoder()?);
    }
    if let Some(p) = &a.backward_checkpoint {
        models = models.with_backward(load_checkpoint(p)?.into_decoder()?);
    }
    if let Some(p) = &a.relevancy_checkpoint {
        models = models.with_relevancy(load_checkpoint(p)?.into_classifier()?);
    }
    let req = GenerationRequest {
        context_text: fs::read_to_string(&a.context_file)?,
        direction: direction(a.direction),
        extent: a.extent,
        k: a.k,
        proximity_lookahead: a.lookahead,
        constraints: ConstraintSet {
            must_include: a.include.clone(),
            must_exclude: a.exclude.clone(),
            enforce_antecedent_basis: a.check_antecedent,
        },
        sampling: SamplingConfig { seed: a.seed, max_tokens: a.max_tokens, ..SamplingConfig::default() },
        truncate_context: true,
    };
    print_json(&json!({ "candidates": complete(&models, &req)? }))
}

/// Reads JSONL: a bare JSON string or an object with the named fields.
fn read_jsonl(path: &Path) -> Result<Vec<Value>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("line {}", i + 1))?);
    }
    Ok(out)
}

fn field<'a>(v: &'a Value, name: &str) -> Result<&'a str> {
    match v {
        Value::String(s) if name == "text" => Ok(s),
        _ => v.get(name).and_then(Value::as_str).with_context(|| format!("missing string field {name:?}")),
    }
}

fn measure(checkpoint: &Path, vocab: &Path, mode: MeasureMode, input: &Path, out: &Path, threshold: f64) -> Result<()> {
    let vocab = Vocabulary::load(vocab)?;
    let clf = load_checkpoint(checkpoint)?.into_classifier()?;
    let mut w = BufWriter::new(File::create(out)?);
    for row in read_jsonl(input)? {
        let scored = match mode {
            MeasureMode::Cpc => {
                let text = field(&row, "text")?;
                let probs = cpc_probabilities(&clf, &vocab, text)?;
                let sections: BTreeSet<CpcSection> = classify_cpc(&clf, &vocab, text, threshold)?;
                json!({ "text": text, "probabilities": probs, "sections": sections })
            }
            MeasureMode::Relevancy => {
                let pair = SpanPair::new(field(&row, "first")?, field(&row, "second")?);
                let score = score_span_relevancy(&clf, &vocab, &pair)?;
                json!({ "first": pair.first, "second": pair.second, "score": score })
            }
        };
        serde_json::to_writer(&mut w, &scored)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn slow_motion(spec: &Path, out: &Path) -> Result<()> {
    let spec: ExperimentSpec = serde_json::from_str(&fs::read_to_string(spec)?).context("invalid experiment spec")?;
    let metrics = run_slow_motion_from_files(&spec, out)?;
    if metrics.len() >= 2 {
        let report = analyze_trend(&metrics)?;
        fs::write(out.join("trend.json"), serde_json::to_string_pretty(&report)?)?;
        print_json(&report)?;
    }
    fs::write(out.join("metrics.csv"), metrics_to_csv(&metrics))?;
    Ok(())
}

fn trend(metrics: &Path, csv: Option<&Path>) -> Result<()> {
    let metrics = read_metrics(metrics)?;
    if let Some(p) = csv {
        fs::write(p, metrics_to_csv(&metrics))?;
    }
    print_json(&analyze_trend(&metrics)?)
}

fn serve(config: Option<&Path>) -> Result<()> {
    let config = claimforge_service::ServiceConfig::load(config)?;
    tokio::runtime::Runtime::new()?.block_on(claimforge_service::serve(config))?;
    Ok(())
}

fn synth(sections: &[String], n: usize, seed: u64, mixed: bool, out: &Path) -> Result<()> {
    let sections: Vec<CpcSection> = sections.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(|e| anyhow::anyhow!("{e}"))?;
    if let Some(s) = sections.iter().find(|s| claimforge::synth::lexicon(**s).is_none()) {
        bail!("no synthetic vocabulary for section {s}");
    }
    let mut records = Vec::new();
    if mixed {
        records = synth_patents(&sections.iter().copied().collect(), n, "S", seed);
    } else {
        for (i, s) in sections.iter().enumerate() {
            records.extend(synth_patents(&BTreeSet::from([*s]), n, &s.to_string(), seed + i as u64));
        }
    }
    let spec = CorpusSpec {
        seed: InventorQuery::by_last_name("synthetic"),
        citation_depth: 0,
        include_keywords: vec![],
        exclude_keywords: vec![],
        fetched_at: chrono::DateTime::UNIX_EPOCH,
        citation_direction: Default::default(),
        filter_stage: Default::default(),
    };
    persist_corpus(out, &spec, &records)?;
    eprintln!("wrote {} synthetic patents to {}", records.len(), out.display());
    Ok(())
}
