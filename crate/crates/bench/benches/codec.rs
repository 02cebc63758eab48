use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use occam_core::codec::{arith, coded_sizes, decode_triplet, encode_triplet, kmeans, support_delta_bytes};
use occam_core::model::{CompressedTriplet, LayerTriplet};

fn sparse_layer(len: u64, keep: f64, seed: u64) -> LayerTriplet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let support: Vec<u64> = (0..len).filter(|_| rng.random_bool(keep)).collect();
    let assignments = support.iter().map(|_| rng.random_range(1..16)).collect();
    let mut codebook = vec![0.0f32];
    codebook.extend((1..16).map(|i| i as f32 / 16.0 - 0.5));
    LayerTriplet {
        name: "fc".into(),
        len,
        support,
        codebook,
        assignments,
        zero_cluster: Some(0),
    }
}

fn bench_arith(c: &mut Criterion) {
    let mut group = c.benchmark_group("arith");
    let layer = sparse_layer(400_000, 0.01, 1);
    let bytes = support_delta_bytes(&layer.support);
    group.throughput(Throughput::Bytes(bytes.len() as u64));
    group.bench_function("encode_support", |b| b.iter(|| arith::encode(&bytes)));
    let coded = arith::encode(&bytes);
    group.bench_function("decode_support", |b| b.iter(|| arith::decode(&coded, bytes.len()).unwrap()));
    group.finish();
}

fn bench_triplet(c: &mut Criterion) {
    let t = CompressedTriplet {
        layers: vec![sparse_layer(25_000, 0.06, 2), sparse_layer(400_000, 0.01, 3), sparse_layer(5_000, 0.1, 4)],
    };
    c.bench_function("cmp1/encode", |b| b.iter(|| encode_triplet(&t).unwrap()));
    let (bytes, _) = encode_triplet(&t).unwrap();
    c.bench_function("cmp1/decode", |b| b.iter(|| decode_triplet(&bytes).unwrap()));
    c.bench_function("cmp1/sizes", |b| b.iter(|| coded_sizes(&t).unwrap()));
}

fn bench_kmeans(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmeans");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [1_000usize, 10_000] {
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &xs, |b, xs| b.iter(|| kmeans(xs, 15, 100, 4, 0)));
    }
    group.finish();
}

criterion_group!(benches, bench_arith, bench_triplet, bench_kmeans);
criterion_main!(benches);
