use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fedseg_core::fed::{aggregate, local_round, ClientState, LocalSettings, StrategyPreset};
use fedseg_core::nn::{ModelConfig, OptimizerConfig, SegModel, SegNet};
use fedseg_core::synth::{generate_client, ClientConfig};
use fedseg_core::tensor::{batchnorm, conv2d, conv2d_backward, BatchNormState};
use fedseg_core::{NormMode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn layers(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random(&[4, 8, 32, 32], &mut rng);
    let k = random(&[8, 8, 3, 3], &mut rng);
    let b = Tensor::zeros(&[8]);
    let g = random(&[4, 8, 32, 32], &mut rng);
    c.bench_function("conv2d 4x8x32x32 k3", |bench| {
        bench.iter(|| conv2d(black_box(&x), black_box(&k), &b, 1).unwrap())
    });
    c.bench_function("conv2d_backward 4x8x32x32 k3", |bench| {
        bench.iter(|| conv2d_backward(black_box(&x), black_box(&k), 1, black_box(&g)).unwrap())
    });
    c.bench_function("batchnorm train 4x8x32x32", |bench| {
        let mut st = BatchNormState::new(8);
        bench.iter(|| batchnorm(black_box(&x), &mut st, NormMode::Train).unwrap())
    });
}

fn federation(c: &mut Criterion) {
    let net = SegNet::new(ModelConfig {
        blocks: vec![8, 8],
        ..ModelConfig::default()
    })
    .unwrap();
    let sets: Vec<_> = (0..8).map(|s| net.init_params(s).unwrap()).collect();
    let views: Vec<_> = sets.iter().collect();
    let weights: Vec<f64> = (0..8).map(|i| 0.1 + i as f64).collect();
    c.bench_function("aggregate 8 clients", |bench| {
        bench.iter(|| aggregate(black_box(&views), black_box(&weights), true).unwrap())
    });

    let data = generate_client(&ClientConfig {
        n_cases: 3,
        ..ClientConfig::default()
    })
    .unwrap();
    let global = net.init_params(0).unwrap();
    let settings = LocalSettings {
        iterations: 1,
        batch_size: 4,
        patch_size: 32,
        optimizer: OptimizerConfig {
            learning_rate: 0.01,
            ..OptimizerConfig::default()
        },
        ..LocalSettings::default()
    };
    let strategy = StrategyPreset::FedMSRW.config();
    let mut client = ClientState::new(0, global.clone(), ChaCha8Rng::seed_from_u64(1));
    c.bench_function("local iteration batch 4 patch 32", |bench| {
        bench.iter(|| local_round(&net, &mut client, &global, &data, &settings, &strategy).unwrap())
    });
}

criterion_group!(benches, layers, federation);
criterion_main!(benches);
