use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use hrtf_field::baselines::{bilinear_interpolate, build_triangulation, vbap_interpolate, InterpolationDomain};
use hrtf_field::gradients::batch_objective;
use hrtf_field::preprocess::make_frequency_grid;
use hrtf_field::synth::{ring_grid, SyntheticDataset};
use hrtf_field::{Direction, EarRows, GradMode, MagnitudeField, SirenNetwork};

fn grid_field() -> MagnitudeField {
    let freqs = make_frequency_grid().bins_hz;
    let els: Vec<f64> = (0..9).map(|i| -40.0 + 15.0 * i as f64).collect();
    SyntheticDataset::generate("bench", ring_grid(36, &els), 1, 1).fields(&freqs).remove(0)
}

fn targets() -> Vec<Direction> {
    (0..500)
        .map(|i| Direction::new((i as f64 * 137.508) % 360.0, -35.0 + (i as f64 * 0.23) % 150.0))
        .collect()
}

fn forward(c: &mut Criterion) {
    let field = grid_field();
    let mut g = c.benchmark_group("forward");
    for hidden in [64, 256] {
        let net = SirenNetwork::with_shape(32, hidden, 2, 92, 30.0, 0).unwrap();
        let z = vec![0.1; 32];
        g.bench_with_input(BenchmarkId::from_parameter(hidden), &hidden, |b, _| {
            b.iter(|| net.predict(black_box(&field.directions), &z).unwrap())
        });
    }
    g.finish();
}

fn objective(c: &mut Criterion) {
    let rows = vec![EarRows::for_training(&grid_field())];
    let net = SirenNetwork::with_shape(8, 64, 2, 92, 30.0, 0).unwrap();
    let mut g = c.benchmark_group("objective");
    g.sample_size(10);
    for (name, mode) in [("exact", GradMode::Exact), ("detached", GradMode::Detached)] {
        g.bench_function(BenchmarkId::new("f32", name), |b| {
            b.iter(|| batch_objective::<f32, _>(&net, black_box(&rows), mode, 1).unwrap())
        });
    }
    g.finish();
}

fn baselines(c: &mut Criterion) {
    let field = grid_field();
    let t = targets();
    let mut g = c.benchmark_group("baselines");
    g.bench_function("triangulation", |b| b.iter(|| build_triangulation(black_box(&field.directions)).unwrap()));
    let tri = build_triangulation(&field.directions).unwrap();
    g.bench_function("vbap", |b| {
        b.iter(|| vbap_interpolate(&field, &tri, black_box(&t), InterpolationDomain::Linear).unwrap())
    });
    g.bench_function("bilinear", |b| {
        b.iter(|| bilinear_interpolate(&field, black_box(&t), InterpolationDomain::Linear).unwrap())
    });
    g.finish();
}

criterion_group!(benches, forward, objective, baselines);
criterion_main!(benches);
