use std::collections::BTreeSet;
use std::hint::black_box;
use std::sync::Arc;

use claimforge::claim::{check_antecedent_basis, parse_claim_block, split_spans};
use claimforge::corpus::CpcSection;
use claimforge::dataset::{build_records, Direction, RecordFormat, Vocabulary};
use claimforge::generate::{generate_candidates, ExtentLevel, GenerationRequest, ModelSet, SamplingConfig};
use claimforge::nn::DecoderLm;
use claimforge::synth::synth_patents;
use claimforge::toy::desk_config;
use criterion::{criterion_group, criterion_main, Criterion};

fn corpus_texts() -> Vec<String> {
    let patents = synth_patents(&BTreeSet::from([CpcSection::A, CpcSection::G]), 200, "B", 1);
    build_records(&patents, RecordFormat::DependentAlone).unwrap().into_iter().map(|r| r.text).collect()
}

fn claims(c: &mut Criterion) {
    let block = "1. A lamp comprising: a base; a stem coupled to the base; and a shade mounted on the stem.\n\
                 2. The lamp of claim 1, wherein the shade is fabric.\n\
                 3. The lamp of claim 2, wherein the stem is hollow and the base is weighted.";
    c.bench_function("parse_and_split", |b| {
        b.iter(|| {
            for claim in parse_claim_block("US1", black_box(block)).unwrap() {
                black_box(split_spans(&claim).unwrap());
                black_box(check_antecedent_basis(&claim.text));
            }
        })
    });
}

fn bpe(c: &mut Criterion) {
    let texts = corpus_texts();
    let vocab = Vocabulary::train(&texts, 512).unwrap();
    let sample = texts[..100].join("\n");
    c.bench_function("bpe_encode_100_records", |b| b.iter(|| black_box(vocab.encode(black_box(&sample)))));
    let ids = vocab.encode(&sample);
    c.bench_function("bpe_decode_100_records", |b| b.iter(|| black_box(vocab.decode(black_box(&ids)).unwrap())));
}

fn model(c: &mut Criterion) {
    let texts = corpus_texts();
    let vocab = Vocabulary::train(&texts, 512).unwrap();
    let lm = DecoderLm::new(desk_config(vocab.len(), 0), vocab.hash()).unwrap();
    let ids = vocab.encode(&texts[0]);
    let ids = &ids[..ids.len().min(64)];
    c.bench_function("decoder_forward", |b| b.iter(|| black_box(lm.forward(black_box(ids)).unwrap())));

    let models = ModelSet::new(Arc::new(vocab)).with_forward(lm);
    let req = GenerationRequest {
        sampling: SamplingConfig { max_tokens: 24, ..SamplingConfig::default() },
        ..GenerationRequest::new("A device comprising:", Direction::Forward, ExtentLevel::Span, 5)
    };
    c.bench_function("generate_k5_span", |b| b.iter(|| black_box(generate_candidates(&models, &req))));
}

criterion_group!(benches, claims, bpe, model);
criterion_main!(benches);
