//! Criterion benchmarks for the hot kernels: pairwise distances, neighbor
//! selection, and whole-network forward passes.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dfa_core::data::{batch_points, generate_synthetic_set, PointCloud, ShapeKind, SynthSpec};
use dfa_core::graph::{knn_graph, knn_select, pairwise_sq_dist, Domain};
use dfa_core::models::{BatchInput, ModelConfig, Network};
use dfa_core::{Mode, ParamSet, Scalar, Tape};

const N: usize = 1024;
const D: usize = 3;
const K: usize = 20;

fn random_points<S: Scalar>(n: usize, d: usize, seed: u64) -> Vec<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * d).map(|_| S::from_f64(rng.gen_range(-1.0..1.0))).collect()
}

fn bench_pairwise(c: &mut Criterion) {
    let mut group = c.benchmark_group("pairwise_sq_dist");
    let pts32 = random_points::<f32>(N, D, 1);
    let pts64 = random_points::<f64>(N, D, 1);
    group.bench_with_input(BenchmarkId::new("f32", N), &pts32, |b, pts| {
        b.iter(|| pairwise_sq_dist(black_box(pts), N, D).unwrap())
    });
    group.bench_with_input(BenchmarkId::new("f64", N), &pts64, |b, pts| {
        b.iter(|| pairwise_sq_dist(black_box(pts), N, D).unwrap())
    });
    group.finish();
}

fn bench_knn(c: &mut Criterion) {
    let pts = random_points::<f32>(N, D, 2);
    let dist = pairwise_sq_dist(&pts, N, D).unwrap();
    let mut group = c.benchmark_group("knn");
    group.bench_function(BenchmarkId::new("select", format!("n{N}k{K}")), |b| {
        b.iter(|| knn_select(black_box(&dist), N, K, Domain::Feature).unwrap())
    });
    group.bench_function(BenchmarkId::new("graph", format!("n{N}k{K}")), |b| {
        b.iter(|| knn_graph(black_box(&pts), N, D, K, Domain::Feature).unwrap())
    });
    group.finish();
}

/// Evaluation-mode forward pass of the quarter-width classifier on a small
/// batch: the end-to-end cost of classifying clouds once weights are fixed.
fn bench_forward(c: &mut Criterion) {
    let spec = SynthSpec {
        classes: vec![ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Torus, ShapeKind::Plane],
        per_class: 1,
        points: 256,
        noise: 0.02,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clouds = generate_synthetic_set(&spec, &mut rng).unwrap();
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let points = batch_points::<f32>(&refs).unwrap();

    let mut cfg = ModelConfig::classification(4);
    cfg.num_points = 256;
    cfg.k = 8;
    cfg.width_scale = 0.25;
    let net = Network::build(cfg).unwrap();
    let mut pset = ParamSet::<f32>::new();
    net.register(&mut pset, &mut rng).unwrap();

    let mut group = c.benchmark_group("network");
    group.sample_size(20);
    group.bench_function("classifier_forward_b4_n256", |b| {
        b.iter(|| {
            let mut tape = Tape::new(Mode::Eval);
            let input = BatchInput { points: &points, categories: None };
            net.forward(&mut tape, &mut pset, black_box(&input), &mut rng).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_pairwise, bench_knn, bench_forward);
criterion_main!(benches);
