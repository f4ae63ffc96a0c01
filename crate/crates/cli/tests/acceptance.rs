//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Pass criterion ids (e.g. `P5 P7`) as
//! arguments to run a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use claimforge::claim::{check_antecedent_basis, parse_claim_block, split_spans};
use claimforge::corpus::{
    build_corpus, persist_corpus, ApiClient, BulkClaimSource, CitationDirection, ClaimSource, CorpusSpec, CpcSection,
    FilterStage, InventorQuery, PatentRecord, RateLimiter, ReplayTransport,
};
use claimforge::dataset::{
    build_records, encode_records, normalize_spaces, reverse_words, with_direction, Direction, RecordFormat,
    TrainingRecord, Vocabulary,
};
use claimforge::experiment::{analyze_trend, run_slow_motion, ExperimentInputs, ExperimentSpec, SetSelector};
use claimforge::generate::{
    generate_all, generate_candidates, sample_texts, ConstraintSet, ExtentLevel, GenerateError, GenerationRequest,
    ModelSet, SamplingConfig, SamplingStrategy,
};
use claimforge::measure::{
    classify_cpc, encode_relevancy_examples, label_distribution_of, personalization_overlap, relevancy_pairs,
    roc_auc, score_span_relevancy, cpc_examples, LabelDistribution,
};
use claimforge::nn::{
    gradient_check, train_classifier, train_lm, ClassifierMode, DecoderLm, EncoderClassifier, ModelConfig, ModelKind,
    TrainConfig,
};
use claimforge::synth::synth_patents;
use claimforge::toy::desk_config;
use claimforge_service::{router, AppState, LoadedModels, ServiceConfig};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = Result<String, String>;

const SECTIONS: [CpcSection; 5] = [CpcSection::A, CpcSection::B, CpcSection::C, CpcSection::G, CpcSection::H];
const VOCAB_SIZE: usize = 512;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    if elapsed <= limit {
        Ok(detail)
    } else {
        Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}"))
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Synthetic corpora shared by the model-based criteria.
struct World {
    /// Training patents per section, single-labeled.
    train: BTreeMap<CpcSection, Vec<PatentRecord>>,
    /// Held-out patents per section, generated with other seeds.
    held_out: BTreeMap<CpcSection, Vec<PatentRecord>>,
    vocab: Vocabulary,
}

impl World {
    fn records(&self, sections: &[CpcSection], held_out: bool) -> Vec<TrainingRecord> {
        let src = if held_out { &self.held_out } else { &self.train };
        let patents: Vec<PatentRecord> = sections.iter().flat_map(|s| src[s].iter().cloned()).collect();
        build_records(&patents, RecordFormat::DependentAlone).expect("synthetic records")
    }

    fn patents(&self, sections: &[CpcSection], held_out: bool) -> Vec<PatentRecord> {
        let src = if held_out { &self.held_out } else { &self.train };
        sections.iter().flat_map(|s| src[s].iter().cloned()).collect()
    }
}

fn world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| {
        let mut train = BTreeMap::new();
        let mut held_out = BTreeMap::new();
        for (i, s) in SECTIONS.iter().enumerate() {
            let one = BTreeSet::from([*s]);
            train.insert(*s, synth_patents(&one, 680, &format!("{s}"), 100 + i as u64));
            held_out.insert(*s, synth_patents(&one, 60, &format!("{s}H"), 900 + i as u64));
        }
        let patents: Vec<PatentRecord> = train.values().flatten().cloned().collect();
        let records = build_records(&patents, RecordFormat::DependentAlone).expect("synthetic records");
        let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
        let vocab = Vocabulary::train(&texts, VOCAB_SIZE).expect("vocabulary");
        World { train, held_out, vocab }
    })
}

fn lm_train_config(steps: u64, seed: u64) -> TrainConfig {
    TrainConfig { learning_rate: 5e-3, batch_size: 8, max_steps: steps, seed, ..TrainConfig::default() }
}

fn train_fresh(records: &[TrainingRecord], steps: u64, seed: u64) -> Result<(DecoderLm, Vec<f64>), String> {
    let w = world();
    let cfg = desk_config(w.vocab.len(), seed);
    let data = encode_records(records, &w.vocab, cfg.context_len);
    let mut model = DecoderLm::new(cfg, w.vocab.hash()).map_err(err)?;
    let report = train_lm(&mut model, &data, &lm_train_config(steps, seed)).map_err(err)?;
    Ok((model, report.loss_trace))
}

fn fine_tune_on(model: &DecoderLm, records: &[TrainingRecord], steps: u64, seed: u64) -> Result<DecoderLm, String> {
    let mut m = model.clone();
    let data = encode_records(records, &world().vocab, m.config().context_len);
    train_lm(&mut m, &data, &lm_train_config(steps, seed)).map_err(err)?;
    Ok(m)
}

fn train_cpc_classifier(sections: &[CpcSection], steps: u64, seed: u64) -> Result<EncoderClassifier, String> {
    let w = world();
    let cfg = desk_config(w.vocab.len(), seed);
    let examples = cpc_examples(&w.patents(sections, false), &w.vocab, cfg.context_len);
    let mut clf = EncoderClassifier::new(cfg, ClassifierMode::Cpc, w.vocab.hash()).map_err(err)?;
    let tc = TrainConfig { learning_rate: 3e-3, batch_size: 16, max_steps: steps, seed, ..TrainConfig::default() };
    train_classifier(&mut clf, &examples, &tc).map_err(err)?;
    Ok(clf)
}

/// Decoder trained from scratch on every section; the mixed-section base.
static MIXED_LM: OnceLock<DecoderLm> = OnceLock::new();
/// A-versus-G classifier.
static AG_CLASSIFIER: OnceLock<EncoderClassifier> = OnceLock::new();

fn mixed_lm() -> Result<&'static DecoderLm, String> {
    if MIXED_LM.get().is_none() {
        p5()?;
    }
    MIXED_LM.get().ok_or_else(|| "mixed-section decoder unavailable".to_string())
}

fn ag_classifier() -> Result<&'static EncoderClassifier, String> {
    if AG_CLASSIFIER.get().is_none() {
        p6()?;
    }
    AG_CLASSIFIER.get().ok_or_else(|| "A/G classifier unavailable".to_string())
}

fn p1() -> Outcome {
    let t = Instant::now();
    let raw = std::fs::read_to_string(fixture("claims_corpus.jsonl")).map_err(err)?;
    let source = BulkClaimSource::from_jsonl(&raw).map_err(err)?;
    let mut total = 0;
    let mut failures = Vec::new();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).map_err(err)?;
        let id = v["patent_id"].as_str().ok_or("missing patent_id")?;
        let block = source.claim_block(id).map_err(err)?.ok_or("missing block")?;
        for claim in parse_claim_block(id, &block).map_err(err)? {
            total += 1;
            match split_spans(&claim) {
                Ok(parsed) => {
                    let joined: String =
                        parsed.spans.iter().flat_map(|s| [s.text.as_str(), s.trailing_separator.as_str()]).collect();
                    if joined != claim.text {
                        failures.push(format!("{id}/{}", claim.number));
                    }
                }
                Err(e) => failures.push(format!("{id}/{}: {e}", claim.number)),
            }
        }
    }
    let detail = format!("{}/{total} claims reassembled byte-exactly", total - failures.len());
    if total < 200 || !failures.is_empty() {
        return Err(format!("{detail}; need >= 200 and none failing {failures:?}"));
    }
    within(t.elapsed(), Duration::from_secs(5), detail)
}

fn random_string(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(0..40);
    (0..len)
        .map(|_| match rng.random_range(0..4) {
            0 => rng.random_range(' '..='~'),
            1 => [' ', '\n', '\t', ';', ':', ',', '.'][rng.random_range(0..7)],
            2 => char::from_u32(rng.random_range(0xA0..0x3000)).unwrap_or('?'),
            _ => rng.random::<char>(),
        })
        .collect()
}

fn p2() -> Outcome {
    let t = Instant::now();
    let w = world();
    let records = w.records(&SECTIONS, false);
    let mut bad = 0;
    for r in &records {
        if w.vocab.decode(&w.vocab.encode(&r.text)).map_err(err)? != r.text {
            bad += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let s = random_string(&mut rng);
        if w.vocab.decode(&w.vocab.encode(&s)).map_err(err)? != s {
            bad += 1;
        }
    }
    let detail = format!("{} records + 10000 random strings, {bad} mismatches", records.len());
    if bad > 0 {
        return Err(detail);
    }
    within(t.elapsed(), Duration::from_secs(30), detail)
}

fn p3() -> Outcome {
    let w = world();
    let forward = w.records(&SECTIONS, false);
    let backward = with_direction(&forward, Direction::Backward);
    let mut bad = 0;
    for r in &forward {
        if reverse_words(&reverse_words(&r.text)) != normalize_spaces(&r.text) {
            bad += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let s = random_string(&mut rng);
        if reverse_words(&reverse_words(&s)) != normalize_spaces(&s) {
            bad += 1;
        }
    }
    let detail = format!(
        "{bad} involution failures over {} records + 10000 strings; {} forward / {} backward records",
        forward.len(),
        forward.len(),
        backward.len()
    );
    check(bad == 0 && backward.len() == forward.len(), detail)
}

fn p4() -> Outcome {
    let t = Instant::now();
    let cfg = ModelConfig::tiny(24);
    let dec = gradient_check(ModelKind::Decoder, cfg).map_err(err)?;
    let clf = gradient_check(ModelKind::Classifier, cfg).map_err(err)?;
    let detail = format!(
        "d_model {}, decoder max rel err {:.2e} ({} params), classifier {:.2e} ({} params)",
        cfg.d_model, dec.max_rel_error, dec.parameters_checked, clf.max_rel_error, clf.parameters_checked
    );
    if cfg.d_model > 16 || dec.max_rel_error >= 1e-3 || clf.max_rel_error >= 1e-3 {
        return Err(detail);
    }
    within(t.elapsed(), Duration::from_secs(120), detail)
}

fn p5() -> Outcome {
    let t = Instant::now();
    let w = world();
    let records = w.records(&SECTIONS, false);
    if records.len() < 10_000 {
        return Err(format!("only {} synthetic records", records.len()));
    }
    let records = &records[..10_000];
    let cfg = desk_config(w.vocab.len(), 5);
    let eval: Vec<Vec<_>> = encode_records(&w.records(&SECTIONS, true), &w.vocab, cfg.context_len)
        .sequences
        .into_iter()
        .step_by(4)
        .take(200)
        .collect();
    let data = encode_records(records, &w.vocab, cfg.context_len);
    let mut model = DecoderLm::new(cfg, w.vocab.hash()).map_err(err)?;
    let before = model.loss(&eval).map_err(err)?;
    let report = train_lm(&mut model, &data, &lm_train_config(800, 5)).map_err(err)?;
    let after = model.loss(&eval).map_err(err)?;
    let finite = report.loss_trace.iter().all(|l| l.is_finite());
    let ratio = after / before;
    let detail = format!(
        "10000 records, {} steps, held-out loss {before:.3} -> {after:.3} ({:.1}% of step 0), trace finite: {finite}",
        report.loss_trace.len(),
        100.0 * ratio
    );
    let _ = MIXED_LM.set(model);
    if !(finite && ratio < 0.5) {
        return Err(detail);
    }
    within(t.elapsed(), Duration::from_secs(600), detail)
}

fn p6() -> Outcome {
    let t = Instant::now();
    let w = world();
    let clf = train_cpc_classifier(&[CpcSection::A, CpcSection::G], 400, 6)?;
    let mut right = 0;
    let mut total = 0;
    for p in w.patents(&[CpcSection::A, CpcSection::G], true) {
        for c in &p.claims {
            total += 1;
            if classify_cpc(&clf, &w.vocab, &c.text, 0.5).map_err(err)? == p.cpc_sections {
                right += 1;
            }
        }
    }
    let acc = right as f64 / total as f64;
    let detail = format!("held-out exact-set accuracy {right}/{total} = {:.2}%", 100.0 * acc);
    let _ = AG_CLASSIFIER.set(clf);
    if acc < 0.95 {
        return Err(detail);
    }
    within(t.elapsed(), Duration::from_secs(300), detail)
}

fn p7() -> Outcome {
    let t = Instant::now();
    let w = world();
    let classifier = ag_classifier()?.clone();
    let (base, _) = train_fresh(&w.records(&[CpcSection::A], false), 600, 7)?;
    let target = encode_records(&w.records(&[CpcSection::G], false), &w.vocab, base.config().context_len);
    let spec = ExperimentSpec {
        base_checkpoint: "base.ckpt".into(),
        classifier_checkpoint: "classifier.ckpt".into(),
        vocabulary: "vocab.json".into(),
        corpus: "corpus.jsonl".into(),
        s1: SetSelector::new(&[CpcSection::A], &[CpcSection::G]),
        s2: SetSelector::new(&[CpcSection::G], &[CpcSection::A]),
        steps_per_segment: 10,
        n_segments: 10,
        claims_per_checkpoint: 64,
        sampling: claimforge::experiment::default_sampling(),
        train: TrainConfig { learning_rate: 3e-3, batch_size: 8, seed: 7, ..TrainConfig::default() },
        threshold: 0.5,
    };
    let inputs = ExperimentInputs { base, classifier, vocab: w.vocab.clone(), target };
    let dir = tempfile::tempdir().map_err(err)?;
    let metrics = run_slow_motion(&spec, &inputs, dir.path()).map_err(err)?;
    let trend = analyze_trend(&metrics).map_err(err)?;
    let count = |i: usize, s: CpcSection| metrics[i].label_counts.get(s);
    let last = metrics.len() - 1;
    let g: Vec<u64> = metrics.iter().map(|m| m.label_counts.get(CpcSection::G)).collect();
    let a: Vec<u64> = metrics.iter().map(|m| m.label_counts.get(CpcSection::A)).collect();
    let joint: Vec<u64> = metrics.iter().map(|m| m.joint_counts.values().sum()).collect();
    let rho = trend
        .sections
        .get(&CpcSection::G)
        .and_then(|s| s.spearman_rho_vs_step)
        .unwrap_or(0.0);
    let detail = format!("{} checkpoints; G counts {g:?} (rho {rho:.3}); A counts {a:?}; joint A&G {joint:?}", metrics.len());
    if !(count(last, CpcSection::G) > count(0, CpcSection::G)
        && rho > 0.0
        && count(last, CpcSection::A) < count(0, CpcSection::A))
    {
        return Err(detail);
    }
    within(t.elapsed(), Duration::from_secs(900), detail)
}

fn p8() -> Outcome {
    let w = world();
    let base = mixed_lm()?;
    let clf = train_cpc_classifier(&SECTIONS, 400, 8)?;
    let reference = LabelDistribution::from_counts(&[(CpcSection::A, w.train[&CpcSection::A].len() as u64)]);
    let a_records = w.records(&[CpcSection::A], false);
    let mut lines = Vec::new();
    let mut wins = 0;
    let (mut sum_base, mut sum_tuned) = (0.0, 0.0);
    for seed in [11u64, 12, 13] {
        let tuned = fine_tune_on(base, &a_records, 150, seed)?;
        let sampling = SamplingConfig { seed, ..claimforge::experiment::default_sampling() };
        let score = |m: &DecoderLm| -> Result<f64, String> {
            let texts = sample_texts(m, &w.vocab, "", Direction::Forward, 64, &sampling, 0).map_err(err)?;
            let (dist, _, _) = label_distribution_of(&clf, &w.vocab, &texts, 0.5).map_err(err)?;
            Ok(personalization_overlap(&dist, &reference).map(|s| s.value).unwrap_or(0.0))
        };
        let (b, f) = (score(base)?, score(&tuned)?);
        sum_base += b;
        sum_tuned += f;
        wins += usize::from(f > b);
        lines.push(format!("seed {seed}: base {b:.3} tuned {f:.3}"));
    }
    let detail = format!(
        "{}/3 seeds higher; mean base {:.3} tuned {:.3} ({})",
        wins,
        sum_base / 3.0,
        sum_tuned / 3.0,
        lines.join(", ")
    );
    check(wins == 3, detail)
}

fn p9() -> Outcome {
    let w = world();
    let cfg = ModelConfig { context_len: 64, ..ModelConfig::tiny(w.vocab.len()) }.with_seed(9);
    let model = DecoderLm::new(cfg, w.vocab.hash()).map_err(err)?;
    let models = ModelSet::new(Arc::new(w.vocab.clone())).with_forward(model);
    let contexts: Vec<String> = w.records(&SECTIONS, true).into_iter().step_by(37).map(|r| r.text).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut ok, mut infeasible, mut leaks, mut wrong) = (0, 0, 0, 0);
    for i in 0..1000u64 {
        let full = &contexts[rng.random_range(0..contexts.len())];
        let cut = full.char_indices().map(|(j, _)| j).filter(|&j| j > 0).collect::<Vec<_>>();
        let context = &full[..cut[rng.random_range(0..cut.len())]];
        let pattern = match rng.random_range(0..3) {
            0 => ["a", "e", "the", " ", "t"][rng.random_range(0..5)].to_string(),
            1 => {
                let words: Vec<&str> = full.split_whitespace().collect();
                words[rng.random_range(0..words.len())].to_string()
            }
            _ => (0..2).map(|_| rng.random_range('a'..='z')).collect(),
        };
        let extent = [ExtentLevel::Token, ExtentLevel::Word, ExtentLevel::Phrase, ExtentLevel::Span][rng.random_range(0..4)];
        let req = GenerationRequest {
            constraints: ConstraintSet { must_exclude: vec![pattern.clone()], ..ConstraintSet::default() },
            sampling: SamplingConfig {
                strategy: SamplingStrategy::Temperature,
                seed: i,
                max_tokens: 12,
                ..SamplingConfig::default()
            },
            ..GenerationRequest::new(context, Direction::Forward, extent, 2)
        };
        let all = generate_all(&models, &req).map_err(err)?;
        let any_clean = all.iter().any(|c| c.accepted());
        match generate_candidates(&models, &req) {
            Ok(cands) => {
                ok += 1;
                leaks += cands.iter().filter(|c| c.text.contains(&pattern)).count();
                wrong += usize::from(!any_clean);
            }
            Err(GenerateError::InfeasibleConstraints { .. }) => {
                infeasible += 1;
                wrong += usize::from(any_clean || all.is_empty());
            }
            Err(GenerateError::NoCandidates) => wrong += usize::from(!all.is_empty()),
            Err(e) => return Err(format!("triple {i}: {e}")),
        }
    }
    let detail = format!(
        "1000 triples: {ok} answered, {infeasible} InfeasibleConstraints, {leaks} leaked candidates, {wrong} wrong outcomes"
    );
    check(leaks == 0 && wrong == 0 && infeasible > 0, detail)
}

fn p10() -> Outcome {
    let raw = std::fs::read_to_string(fixture("antecedent_cases.json")).map_err(err)?;
    let cases: Vec<Value> = serde_json::from_str(&raw).map_err(err)?;
    let (mut fneg, mut fpos, mut seeded) = (0, 0, 0);
    for case in &cases {
        let text = case["text"].as_str().ok_or("case without text")?;
        let mut want: Vec<(String, String)> = case["violations"]
            .as_array()
            .ok_or("case without violations")?
            .iter()
            .map(|v| (v["phrase"].as_str().unwrap_or("").to_string(), v["kind"].as_str().unwrap_or("").to_string()))
            .collect();
        seeded += usize::from(!want.is_empty());
        let mut got: Vec<(String, String)> = check_antecedent_basis(text)
            .violations
            .iter()
            .map(|v| (v.phrase.clone(), serde_json::to_value(v.kind).unwrap().as_str().unwrap_or("").to_string()))
            .collect();
        want.sort();
        got.sort();
        for w in &want {
            if let Some(i) = got.iter().position(|g| g == w) {
                got.remove(i);
            } else {
                fneg += 1;
            }
        }
        fpos += got.len();
    }
    let detail = format!(
        "{} cases ({seeded} seeded, {} clean): {fneg} false negatives, {fpos} false positives",
        cases.len(),
        cases.len() - seeded
    );
    check(cases.len() == 20 && seeded == 10 && fneg == 0 && fpos == 0, detail)
}

fn p11() -> Outcome {
    let t = Instant::now();
    let w = world();
    let cfg = desk_config(w.vocab.len(), 11);
    let train_pairs = relevancy_pairs(&w.patents(&SECTIONS, false), 11);
    let examples = encode_relevancy_examples(&train_pairs, &w.vocab, cfg.context_len);
    let mut clf = EncoderClassifier::new(cfg, ClassifierMode::Relevancy, w.vocab.hash()).map_err(err)?;
    let tc = TrainConfig { learning_rate: 3e-3, batch_size: 16, max_steps: 3000, seed: 11, ..TrainConfig::default() };
    train_classifier(&mut clf, &examples, &tc).map_err(err)?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (pair, relevant) in relevancy_pairs(&w.patents(&SECTIONS, true), 12) {
        let s = score_span_relevancy(&clf, &w.vocab, &pair).map_err(err)?;
        if relevant {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    let auc = roc_auc(&pos, &neg);
    let detail = format!("held-out AUC {auc:.3} over {} adjacent / {} cross-patent pairs", pos.len(), neg.len());
    if auc < 0.8 {
        return Err(detail);
    }
    within(t.elapsed(), Duration::from_secs(300), detail)
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> Result<(StatusCode, String), String> {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .map_err(err)?;
    let resp = app.clone().oneshot(req).await.map_err(err)?;
    let status = resp.status();
    let bytes = resp.into_body().collect().await.map_err(err)?.to_bytes();
    Ok((status, String::from_utf8_lossy(&bytes).into_owned()))
}

async fn service_contract(app: axum::Router) -> Outcome {
    let (status, body) = call(&app, "POST", "/v1/sessions", None).await?;
    if status != StatusCode::CREATED {
        return Err(format!("create session: {status} {body}"));
    }
    let session: Value = serde_json::from_str(&body).map_err(err)?;
    let sid = session["session_id"].as_str().ok_or("no session_id")?.to_string();
    let req = json!({
        "session_id": sid, "context": "A device comprising:", "direction": "forward", "extent": "span", "k": 5,
        "sampling": { "strategy": "top_k", "top_k": 40, "temperature": 1.0, "max_tokens": 48, "seed": 12 }
    });
    let t = Instant::now();
    let (status, body) = call(&app, "POST", "/v1/complete", Some(req)).await?;
    let latency = t.elapsed();
    if status != StatusCode::OK {
        return Err(format!("complete: {status} {body}"));
    }
    let v: Value = serde_json::from_str(&body).map_err(err)?;
    let cands = v["candidates"].as_array().ok_or("no candidates")?;
    let scores: Vec<f64> = cands.iter().filter_map(|c| c["score"].as_f64()).collect();
    let ordered = scores.windows(2).all(|p| p[0] >= p[1]);
    let cid = cands.first().and_then(|c| c["candidate_id"].as_str()).ok_or("no candidate id")?;
    let fb = json!({ "session_id": sid, "candidate_id": cid, "action": "Accepted" });
    let (status, body) = call(&app, "POST", "/v1/feedback", Some(fb)).await?;
    if status != StatusCode::NO_CONTENT {
        return Err(format!("feedback: {status} {body}"));
    }
    let (_, export) = call(&app, "GET", "/v1/annotations", None).await?;
    let hits = export
        .lines()
        .filter_map(|l| serde_json::from_str::<Value>(l).ok())
        .filter(|a| a["candidate_id"] == cid && a["session_id"] == sid.as_str() && a["action"] == "Accepted")
        .count();
    let detail = format!(
        "{} candidates (ordered: {ordered}) in {latency:.2?}; annotation exported {hits} time(s)",
        cands.len()
    );
    check(cands.len() == 5 && scores.len() == 5 && ordered && latency < Duration::from_secs(2) && hits == 1, detail)
}

fn p12() -> Outcome {
    let w = world();
    let fwd = mixed_lm()?.clone();
    let models = LoadedModels::from_set(ModelSet::new(Arc::new(w.vocab.clone())).with_forward(fwd));
    let state = Arc::new(AppState::new(ServiceConfig::default(), models).map_err(err)?);
    let rt = tokio::runtime::Runtime::new().map_err(err)?;
    rt.block_on(service_contract(router(state)))
}

fn p13() -> Outcome {
    let replay = ReplayTransport::from_file(fixture("patentsview_replay.json")).map_err(err)?;
    let client = ApiClient::new(Arc::new(replay)).with_rate_limiter(RateLimiter::unlimited());
    let claims = BulkClaimSource::from_file(fixture("bulk_claims.jsonl")).map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let mut sets: Vec<BTreeSet<String>> = Vec::new();
    let mut identical = true;
    for depth in 0..=2u32 {
        let spec = CorpusSpec {
            seed: InventorQuery::by_last_name("Okafor"),
            citation_depth: depth,
            include_keywords: vec![],
            exclude_keywords: vec![],
            fetched_at: chrono::DateTime::UNIX_EPOCH,
            citation_direction: CitationDirection::Backward,
            filter_stage: FilterStage::AfterExpansion,
        };
        let mut bytes = Vec::new();
        for run in 0..2 {
            let (built, recs) = build_corpus(&spec, &client, &claims).map_err(err)?;
            let path = dir.path().join(format!("d{depth}-{run}.jsonl"));
            persist_corpus(&path, &built, &recs).map_err(err)?;
            bytes.push(std::fs::read(&path).map_err(err)?);
            if run == 0 {
                sets.push(recs.iter().map(|r| r.patent_id.clone()).collect());
            }
        }
        identical &= bytes[0] == bytes[1];
    }
    let monotone = sets.windows(2).all(|p| p[0].is_subset(&p[1]));
    let sizes: Vec<usize> = sets.iter().map(BTreeSet::len).collect();
    check(monotone && identical, format!("depth 0/1/2 sizes {sizes:?}; monotone {monotone}; byte-identical reruns {identical}"))
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 13] = [
        ("P1", "span round-trip", p1),
        ("P2", "tokenizer losslessness", p2),
        ("P3", "reversal involution", p3),
        ("P4", "gradient check", p4),
        ("P5", "toy LM learns", p5),
        ("P6", "classifier separability", p6),
        ("P7", "slow-motion trend", p7),
        ("P8", "personalization overlap", p8),
        ("P9", "constraint soundness", p9),
        ("P10", "antecedent checker", p10),
        ("P11", "relevancy separability", p11),
        ("P12", "service contract", p12),
        ("P13", "corpus pipeline determinism", p13),
    ];
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('P')).collect();
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id:<4} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                println!("{id:<4} FAIL  {name}: {detail} [{secs:.1}s]");
                failed.push(id);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
