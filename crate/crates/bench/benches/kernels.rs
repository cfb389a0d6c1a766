use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hdrvqa_core::contrastive::{total_loss_with_grad, Checkpoint, LabeledBatch, ModelConfig};
use hdrvqa_core::features::FeatureExtractor;
use hdrvqa_core::ladder::{encode_to_budget, procedural_frame};
use hdrvqa_core::media::transfer::{pq_eotf, pq_oetf};
use hdrvqa_core::nn::EncoderKind;
use hdrvqa_core::quality::fit_svr;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn loss(c: &mut Criterion) {
    let mut g = c.benchmark_group("total_loss_with_grad");
    for n in [64usize, 256] {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z: Vec<f64> = (0..2 * n * 128).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = LabeledBatch::paired_views(z, 128, 0.1).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(2 * n), &batch, |b, batch| {
            b.iter(|| total_loss_with_grad(black_box(batch)).unwrap())
        });
    }
    g.finish();
}

fn svr(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xs: Vec<Vec<f64>> = (0..200).map(|_| (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.2..0.2))
        .collect();
    c.bench_function("fit_svr 200x64", |b| b.iter(|| fit_svr(black_box(&xs), &ys, 1.0, 0.1, 1e-3).unwrap()));
}

fn toy_features(c: &mut Criterion) {
    let ckpt = Checkpoint::random(ModelConfig::new(EncoderKind::ToyCnn), 0).unwrap();
    let ex = FeatureExtractor::new(&ckpt, "bench").unwrap();
    let frame = procedural_frame(3, 128, 128).unwrap();
    c.bench_function("toy-cnn frame_feature 128x128", |b| b.iter(|| ex.frame_feature(black_box(&frame)).unwrap()));
}

fn transfer(c: &mut Criterion) {
    let codes: Vec<f64> = (0..1024).map(|i| i as f64 / 1023.0).collect();
    c.bench_function("pq round trip x1024", |b| {
        b.iter(|| {
            codes
                .iter()
                .map(|&v| pq_oetf(pq_eotf(black_box(v)).unwrap()).unwrap())
                .sum::<f64>()
        })
    });
}

fn codec(c: &mut Criterion) {
    let frame = procedural_frame(4, 256, 144).unwrap();
    c.bench_function("encode_to_budget 256x144", |b| {
        b.iter(|| encode_to_budget(std::slice::from_ref(black_box(&frame)), 40_000.0).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = loss, svr, toy_features, transfer, codec
}
criterion_main!(benches);
