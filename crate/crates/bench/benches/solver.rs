use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tolc_core::complexity::ComplexityModel;
use tolc_core::encoder::fixed_point_codebook;
use tolc_core::solver::{self, ToleranceProblem};

fn instance(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
    let g = (0..n).map(|_| 1.0 - rng.random::<f64>() * 0.99).collect();
    (w, h, g, 10.0 - rng.random::<f64>() * 9.9)
}

fn solvers(c: &mut Criterion) {
    let codebook = fixed_point_codebook(8, 1.0).unwrap();
    let mut group = c.benchmark_group("solver");
    for n in [1_000, 10_000] {
        let (w, h, g, headroom) = instance(n, 1);
        let log = ComplexityModel::log_tolerance();
        let log_d = log.descent_info(&w).unwrap();
        let quad = ComplexityModel::quadratic_to_codeword(codebook.values().to_vec(), h).unwrap();
        let quad_d = quad.descent_info(&w).unwrap();
        let lp = ToleranceProblem::new(&g, headroom, &log, &log_d, 0.05);
        let qp = ToleranceProblem::new(&g, headroom, &quad, &quad_d, 0.05);
        group.bench_with_input(BenchmarkId::new("general_log", n), &lp, |b, p| {
            b.iter(|| solver::solve_general(p).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("logform", n), &lp, |b, p| {
            b.iter(|| solver::solve_logform(p).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("general_quad", n), &qp, |b, p| {
            b.iter(|| solver::solve_general(p).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("quadform", n), &qp, |b, p| {
            b.iter(|| solver::solve_quadform(p).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, solvers);
criterion_main!(benches);
