//! Sequential vs parallel sliced Wasserstein evaluation across sample
//! counts and projection counts.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wnp::transport::{sample_projections, sliced_wasserstein_pow_vals_seq, EmpiricalDistribution};
use wnp::diffmath::Tensor;

fn cloud(n: usize, d: usize, seed: u64) -> EmpiricalDistribution {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    EmpiricalDistribution::new(Tensor::matrix(n, d, values).unwrap()).unwrap()
}

fn bench_swd(c: &mut Criterion) {
    let mut group = c.benchmark_group("sliced_wasserstein");
    for &(n, d, n_proj) in &[(100usize, 8usize, 50usize), (500, 8, 50), (500, 64, 200), (2000, 16, 200)] {
        let a = cloud(n, d, 1);
        let b = cloud(n, d, 2);
        let proj = sample_projections(n_proj, d, 7).unwrap();
        let label = format!("n{n}_d{d}_proj{n_proj}");
        group.bench_with_input(BenchmarkId::new("seq", &label), &(), |bench, _| {
            bench.iter(|| sliced_wasserstein_pow_vals_seq(&a, &b, &proj, 2.0).unwrap())
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("par", &label), &(), |bench, _| {
            bench.iter(|| {
                wnp::transport::sliced_wasserstein_pow_vals_par(&a, &b, &proj, 2.0).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_swd);
criterion_main!(benches);
