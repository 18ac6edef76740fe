use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use walldiff_core::diffusion::{train_step, Denoiser};
use walldiff_core::metrics::{fit_feature_cloud, frechet_distance, score_iou, FeatureExtractor};
use walldiff_core::tensor::conv2d;
use walldiff_core::{
    seeded_gaussian, AdamConfig, AdamState, DenoiserModel, Graph, NoiseSchedule, Parameterization,
    UNetConfig,
};
use walldiff_testbench::{toy_drawings, toy_example};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3x3");
    for &(ch, h, w) in &[(16, 32, 64), (32, 16, 32), (64, 8, 16)] {
        let x = seeded_gaussian(&[ch, h, w], 1);
        let k = seeded_gaussian(&[ch, ch, 3, 3], 2);
        g.bench_with_input(
            BenchmarkId::new("forward", format!("{ch}x{h}x{w}")),
            &(),
            |b, _| b.iter(|| conv2d(black_box(&x), &k, None, 1, 1).unwrap()),
        );
        g.bench_with_input(
            BenchmarkId::new("forward+backward", format!("{ch}x{h}x{w}")),
            &(),
            |b, _| {
                b.iter(|| {
                    let mut gr = Graph::new();
                    let xi = gr.param(x.clone());
                    let ki = gr.param(k.clone());
                    let y = gr.conv2d(xi, ki, None, 1, 1).unwrap();
                    let l = gr.sum_squares(y).unwrap();
                    gr.backward(l).unwrap();
                    black_box(gr.grad(ki).map(|g| g.len()))
                })
            },
        );
    }
    g.finish();
}

fn denoiser(c: &mut Criterion) {
    let ex = toy_example();
    let sched = NoiseSchedule::build(200, 0.008).unwrap();
    let mut model = DenoiserModel::new(UNetConfig::toy()).unwrap();
    let mut g = c.benchmark_group("denoiser_toy");
    g.sample_size(20);
    g.bench_function("forward", |b| {
        b.iter(|| model.predict(black_box(&ex.x0), 100, &ex.y, ex.d).unwrap())
    });
    let mut adam = AdamState::new(AdamConfig::default(), model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    g.bench_function("train_step", |b| {
        b.iter(|| {
            train_step(
                &mut model,
                &ex,
                &sched,
                Parameterization::PredictX0,
                &mut adam,
                &mut rng,
            )
            .unwrap()
        })
    });
    g.finish();
}

fn schedule(c: &mut Criterion) {
    c.bench_function("schedule_build_T2000", |b| {
        b.iter(|| NoiseSchedule::build(black_box(2000), 0.008).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let ds = toy_drawings(32);
    c.bench_function("score_iou_32x64", |b| {
        b.iter(|| score_iou(black_box(&ds[0]), &ds[1]).unwrap())
    });
    let e = FeatureExtractor::ClassMoments;
    let a = fit_feature_cloud(&ds[..16].iter().map(|d| e.extract(d)).collect::<Vec<_>>()).unwrap();
    let b2 = fit_feature_cloud(&ds[16..].iter().map(|d| e.extract(d)).collect::<Vec<_>>()).unwrap();
    c.bench_function("frechet_25d", |b| {
        b.iter(|| frechet_distance(black_box(&a), &b2).unwrap())
    });
}

criterion_group!(benches, conv, denoiser, schedule, metrics);
criterion_main!(benches);
