use criterion::{criterion_group, criterion_main, Criterion};

use tolc_core::nn;
use tolc_core::nn::Activation;
use tolc_core::synth::{gen_random_dataset, SynthConfig};
use tolc_core::train::init_model;

fn forward_and_gradient(c: &mut Criterion) {
    let data = gen_random_dataset(&SynthConfig::new(2_000, 200, 1)).unwrap();
    let single = init_model(200, 2, &[], Activation::Sigmoid, 1).unwrap();
    let mlp = init_model(200, 2, &[64, 32], Activation::Relu, 1).unwrap();
    let batch = data.subset(&(0..32).collect::<Vec<_>>()).unwrap();

    let mut group = c.benchmark_group("nn");
    for (name, model) in [("single", &single), ("mlp", &mlp)] {
        group.bench_function(format!("loss_2000/{name}"), |b| b.iter(|| nn::loss(model, &data).unwrap()));
        group.bench_function(format!("gradient_2000/{name}"), |b| {
            b.iter(|| nn::gradient(model, &data).unwrap())
        });
        group.bench_function(format!("gradient_32/{name}"), |b| {
            b.iter(|| nn::gradient(model, &batch).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, forward_and_gradient);
criterion_main!(benches);
