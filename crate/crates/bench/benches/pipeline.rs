use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use finsent_bench::synthetic_corpus;
use finsent_core::encoder::{
    encode_dataset, encoder_vocab_size, logits, loss_and_grad, AdapterSet, AdapterTarget, EncoderConfig, EncoderParams,
    TrainMode,
};
use finsent_core::features::{build_vocabulary, tfidf};
use finsent_core::linear::{self, LinearHyper};
use finsent_core::metrics::{confusion, report};
use finsent_core::SentimentLabel;

fn features(c: &mut Criterion) {
    let ds = synthetic_corpus(600, 1);
    let vocab = build_vocabulary(&ds, 1, None).unwrap();
    c.bench_function("vocabulary/600 headlines", |b| b.iter(|| build_vocabulary(black_box(&ds), 1, None)));
    c.bench_function("tfidf/600 headlines", |b| b.iter(|| tfidf(black_box(&ds), &vocab)));

    let x = tfidf(&ds, &vocab).unwrap();
    let hyper = LinearHyper { epochs: 5, ..LinearHyper::default() };
    c.bench_function("linear/5 epochs on 600", |b| b.iter(|| linear::train(&x, &ds.labels(), &hyper)));
}

fn encoder(c: &mut Criterion) {
    let ds = synthetic_corpus(64, 2);
    let vocab = build_vocabulary(&ds, 1, None).unwrap();
    let config = EncoderConfig {
        vocab_size: encoder_vocab_size(&vocab),
        d_model: 32,
        n_heads: 4,
        d_ff: 64,
        n_layers: 1,
        max_seq_len: 24,
        n_classes: 3,
        layernorm_eps: 1e-5,
    };
    let params = EncoderParams::init(&config, 2).unwrap();
    let adapters = AdapterSet::new(&config, &AdapterTarget::DEFAULT, 4, 8.0, 2).unwrap();
    let examples = encode_dataset(&ds, &vocab, config.max_seq_len);
    let ex = &examples[0];
    c.bench_function("encoder/forward one headline", |b| {
        b.iter(|| logits(black_box(&ex.ids), &ex.mask, &params, None, &config))
    });
    let batch = &examples[..8];
    c.bench_function("encoder/full backward batch 8", |b| {
        b.iter(|| loss_and_grad(&params, None, black_box(batch), &config, TrainMode::Full))
    });
    c.bench_function("encoder/peft backward batch 8", |b| {
        b.iter(|| loss_and_grad(&params, Some(&adapters), black_box(batch), &config, TrainMode::Peft))
    });
}

fn metrics(c: &mut Criterion) {
    let truth: Vec<SentimentLabel> = (0..10_000).map(|i| SentimentLabel::ALL[i % 3]).collect();
    let pred: Vec<Option<SentimentLabel>> =
        (0..10_000).map(|i| (i % 17 != 0).then(|| SentimentLabel::ALL[(i * 7) % 3])).collect();
    c.bench_function("metrics/report on 10k", |b| {
        b.iter_batched(
            || (truth.clone(), pred.clone()),
            |(t, p)| report(&confusion(&t, &p).unwrap()),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, features, encoder, metrics);
criterion_main!(benches);
