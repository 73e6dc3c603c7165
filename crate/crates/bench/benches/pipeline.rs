use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use eigenhearts::experiment::synthetic_split;
use eigenhearts::{
    build_library, init_model, loss_and_grad, project_image, svd_gram, svd_thin, ConvNetArch,
    Image, Partition, SyntheticSpec, TruncationRule,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn svd(c: &mut Criterion) {
    let mut group = c.benchmark_group("svd");
    for (j, k) in [(50, 50), (200, 200)] {
        let a = random_matrix(j, k, 1);
        group.bench_with_input(BenchmarkId::new("thin", format!("{j}x{k}")), &a, |b, a| {
            b.iter(|| svd_thin(a).unwrap())
        });
    }
    // one class of the headline synthetic set: 64x64 frames, 90 snapshots
    for (j, k) in [(200, 200), (4096, 90)] {
        let a = random_matrix(j, k, 2);
        group.bench_with_input(BenchmarkId::new("gram", format!("{j}x{k}")), &a, |b, a| {
            b.iter(|| svd_gram(a).unwrap())
        });
    }
    group.finish();
}

fn headline_spec() -> SyntheticSpec {
    SyntheticSpec {
        class_count: 5,
        frames_per_class: 120,
        image_side: 64,
        intrinsic_rank: 5,
        noise_level: 0.25,
        seed: 7,
        samples_per_class: 8,
    }
}

fn projection(c: &mut Criterion) {
    let (_, split) = synthetic_split(&headline_spec()).unwrap();
    c.bench_function("build_library/gavish", |b| {
        b.iter(|| build_library(&split, TruncationRule::GavishDonoho, "bench", 0).unwrap())
    });
    let library = build_library(&split, TruncationRule::GavishDonoho, "bench", 0).unwrap();
    let frame = &split.partition(Partition::Unseen)[0];
    let basis = library.basis_of(&frame.label).unwrap();
    c.bench_function("project_image/64x64", |b| {
        b.iter(|| project_image(basis, &frame.image).unwrap())
    });
}

fn convnet(c: &mut Criterion) {
    let arch = ConvNetArch::new(64, 64, [8, 16, 16], 32, 5).unwrap();
    let model = init_model(arch, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let images: Vec<Image> = (0..32)
        .map(|_| Image::new(64, 64, (0..4096).map(|_| rng.random::<f64>()).collect()).unwrap())
        .collect();
    let refs: Vec<&Image> = images.iter().collect();
    let labels: Vec<usize> = (0..32).map(|i| i % 5).collect();
    c.bench_function("convnet/loss_and_grad/batch32", |b| {
        b.iter(|| loss_and_grad(&model, &refs, &labels).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = svd, projection, convnet
}
criterion_main!(benches);
