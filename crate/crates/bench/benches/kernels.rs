use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rnf_core::dynamics::{integrate, IntegratorConfig};
use rnf_core::index::{enumerate_class, DEFAULT_ENUMERATION_CAP};
use rnf_core::rational::{bracket, random_hamiltonian, Family, SubclassTag, TermPool};
use rnf_core::{ClassTag, FourierState, ModelParams};

fn enumeration(c: &mut Criterion) {
    c.bench_function("enumerate resonant sextics |a|<=8", |b| {
        b.iter(|| enumerate_class(3, 8, ClassTag::R, true, DEFAULT_ENUMERATION_CAP).unwrap())
    });
}

fn brackets(c: &mut Criterion) {
    let p = ModelParams { phi2: 0.5, ..ModelParams::cubic(3) };
    let pool = TermPool::new(3, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_hamiltonian(SubclassTag { family: Family::BigOmega, star: true, r: 3 }, &pool, 2, false, &mut rng).unwrap();
    let h = random_hamiltonian(SubclassTag { family: Family::BigOmega, star: false, r: 4 }, &pool, 2, true, &mut rng).unwrap();
    c.bench_function("rational bracket H*_3 x H_4", |b| b.iter(|| bracket(&a, &h, &p, 1_000_000).unwrap()));
}

fn integrator(c: &mut Criterion) {
    let p = ModelParams::cubic(32);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z = FourierState::random_real(32, 0.1, 4.0, &mut rng);
    let cfg = IntegratorConfig { dt: 1e-2, t_final: 1.0, sample_every: 100, ..Default::default() };
    c.bench_function("split-step K=32, 100 steps", |b| b.iter(|| integrate(&z, &p, &cfg).unwrap()));
}

criterion_group!(benches, enumeration, brackets, integrator);
criterion_main!(benches);
