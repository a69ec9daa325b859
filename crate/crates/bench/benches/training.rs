use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rprl_core::training::{collect_cycle, q_update_cycle, AttackSurface, TrainConfig, TrainState};
use rprl_core::{build_gridworld, sample_magnitude, GridWorldSpec, SamplerConfig};

fn bench_sampler(c: &mut Criterion) {
    let cfg = SamplerConfig::new(0.01, 1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    c.bench_function("sample_magnitude", |b| {
        b.iter(|| sample_magnitude(rng.random::<f64>(), &cfg, &mut rng))
    });
}

fn bench_training_cycle(c: &mut Criterion) {
    let world = build_gridworld(&GridWorldSpec::bridge()).unwrap();
    let mdp = world.mdp();
    let cfg = TrainConfig::with_defaults(0.6, SamplerConfig::new(0.01, 0.6, 0.6).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut state = TrainState::new(mdp, AttackSurface::Dynamics, &cfg).unwrap();
    collect_cycle(mdp, AttackSurface::Dynamics, &mut state, &cfg, &mut rng).unwrap();
    let mut group = c.benchmark_group("training");
    group.sample_size(20);
    group.bench_function("collect_cycle", |b| {
        b.iter(|| collect_cycle(mdp, AttackSurface::Dynamics, &mut state, &cfg, &mut rng).unwrap())
    });
    group.bench_function("q_update_cycle", |b| {
        b.iter(|| q_update_cycle(mdp, AttackSurface::Dynamics, &mut state, &cfg, &mut rng).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_sampler, bench_training_cycle);
criterion_main!(benches);
