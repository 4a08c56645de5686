use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use protoscope::data::generate_mixture;
use protoscope::metrics::{build_ensemble, js_divergence, score_agr};
use protoscope::nn::{init_params, Provenance};
use protoscope::pipeline::{train_baseline, PipelineConfig};
use protoscope::{adv_distance, EnsembleConfig, GenConfig, ModelCheckpoint, ModelSpec, Norm, RngStream, TrainConfig};

fn network(c: &mut Criterion) {
    let spec = ModelSpec::mlp(20, &[64, 64], 10).unwrap();
    let model = ModelCheckpoint::new(spec.clone(), init_params(&spec, RngStream::new(1, 0)), Provenance::default()).unwrap();
    let xs: Vec<Vec<f64>> = (0..32).map(|i| (0..20).map(|j| ((i * 20 + j) as f64 * 0.37).sin()).collect()).collect();
    let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let ys: Vec<usize> = (0..32).map(|i| i % 10).collect();
    c.bench_function("forward_20x64x64x10", |b| b.iter(|| model.forward(black_box(&xs[0])).unwrap()));
    c.bench_function("loss_and_gradients_batch32", |b| b.iter(|| model.loss_and_gradients(black_box(&refs), &ys).unwrap()));
}

fn adversarial(c: &mut Criterion) {
    let ds = generate_mixture(&GenConfig { n_per_class: 50, ..GenConfig::default() }).unwrap();
    let mut cfg = PipelineConfig::default().reseeded(3);
    cfg.train.epochs = 10;
    let model = train_baseline(&ds, &cfg).unwrap();
    let mut group = c.benchmark_group("adv_distance");
    for norm in [Norm::L2, Norm::Linf] {
        let attack = protoscope::AttackConfig { norm, ..cfg.attack_for(&ds) };
        group.bench_function(format!("{norm:?}"), |b| b.iter(|| adv_distance(&model, black_box(ds.row(0)), ds.labels()[0], &attack).unwrap()));
    }
    group.finish();
}

fn agreement(c: &mut Criterion) {
    let p = [0.7, 0.2, 0.05, 0.05];
    let q = [0.1, 0.6, 0.2, 0.1];
    c.bench_function("js_divergence_4", |b| b.iter(|| js_divergence(black_box(&p), black_box(&q)).unwrap()));

    let ds = generate_mixture(&GenConfig { n_per_class: 50, ..GenConfig::default() }).unwrap();
    let cfg = EnsembleConfig { n_members: 5, train: TrainConfig { epochs: 5, ..TrainConfig::default() }, ..EnsembleConfig::default() };
    let ensemble = build_ensemble(&ds, &cfg).unwrap();
    c.bench_function("score_agr_5_members", |b| b.iter(|| score_agr(&ensemble, black_box(&ds)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = network, adversarial, agreement
}
criterion_main!(benches);
