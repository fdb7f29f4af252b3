use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dsc_core::metrics::auroc;
use dsc_core::scorers::fit_knn;
use dsc_core::specmath::{covariance_split, sym_eig, FeatureMatrix, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_eig(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = c.benchmark_group("sym_eig");
    for d in [16, 32, 64] {
        let a = random_matrix(&mut rng, d, d);
        let s = a.add(&a.transpose()).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(d), &s, |b, s| b.iter(|| sym_eig(s).unwrap()));
    }
    g.finish();
}

fn bench_covariance(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = random_matrix(&mut rng, 2000, 32);
    let labels = (0..2000).map(|i| i % 6).collect();
    let fm = FeatureMatrix::new(data, labels, 6).unwrap();
    c.bench_function("covariance_split_2000x32", |b| b.iter(|| covariance_split(&fm).unwrap()));
}

fn bench_knn(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let train = random_matrix(&mut rng, 2000, 32);
    let query = random_matrix(&mut rng, 500, 32);
    let knn = fit_knn(&train, 10, true).unwrap();
    c.bench_function("knn_score_500_vs_2000", |b| b.iter(|| knn.score(&query).unwrap()));
}

fn bench_auroc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let id: Vec<f64> = (0..5000).map(|_| rng.random::<f64>() + 0.2).collect();
    let ood: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
    c.bench_function("auroc_5000x5000", |b| b.iter(|| auroc(&id, &ood).unwrap()));
}

criterion_group!(benches, bench_eig, bench_covariance, bench_knn, bench_auroc);
criterion_main!(benches);
