//! Benchmarks for the hot paths of the reconstruction pipeline: filter bank
//! transport, score evaluation, denoising, the coil prox and one full
//! predictor step.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pogmdm_core::experts::{GmmExpert, TimeConditioning};
use pogmdm_core::filterbank::{FilterBank, SpectralMode};
use pogmdm_core::mri::prox_coil;
use pogmdm_core::prior::{ModelMetadata, PoGmdm};
use pogmdm_core::recon::{predictor_step, ImagePair};
use pogmdm_core::synth;

fn model(o: usize, l: usize, n: usize, seed: u64) -> PoGmdm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bank = FilterBank::random_init(o, 5, (n, n), &mut rng).unwrap();
    let experts = (0..o)
        .map(|_| GmmExpert::uniform(-0.5, 0.5, l).unwrap())
        .collect();
    let nu2 = bank.spectral_nu(SpectralMode::Max);
    let sigma0_sq = 1.0 / (l - 1) as f64;
    PoGmdm::new(
        bank,
        experts,
        TimeConditioning::SpectralMax { nu2, sigma0_sq },
        ModelMetadata::default(),
    )
    .unwrap()
}

fn bench_filterbank(c: &mut Criterion) {
    let mut group = c.benchmark_group("filterbank");
    for &n in &[64usize, 128] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bank = FilterBank::random_init(20, 5, (n, n), &mut rng).unwrap();
        let x = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
        group.bench_with_input(BenchmarkId::new("forward", n), &n, |b, _| {
            b.iter(|| bank.conv_forward(&x).unwrap())
        });
        let responses = bank.conv_forward(&x).unwrap();
        group.bench_with_input(BenchmarkId::new("adjoint", n), &n, |b, _| {
            b.iter(|| bank.conv_adjoint(&responses).unwrap())
        });
    }
    group.finish();
}

fn bench_score_and_denoise(c: &mut Criterion) {
    let mut group = c.benchmark_group("prior");
    for &n in &[64usize, 128] {
        let m = model(20, 125, n, 2);
        let image = synth::shepp_logan(n);
        group.bench_with_input(BenchmarkId::new("score", n), &n, |b, _| {
            b.iter(|| m.score(&image, 0.01).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("tweedie", n), &n, |b, _| {
            b.iter(|| m.denoise_tweedie(&image, 0.0025).unwrap())
        });
    }
    group.finish();
}

fn bench_prox(c: &mut Criterion) {
    let mut group = c.benchmark_group("coil_prox");
    for &n in &[64usize, 256] {
        let coils = synth::synthetic_coils(4, n, 3);
        group.bench_with_input(BenchmarkId::new("prox", n), &n, |b, _| {
            b.iter(|| prox_coil(&coils, 10.0).unwrap())
        });
    }
    group.finish();
}

fn bench_predictor(c: &mut Criterion) {
    let n = 64;
    let m = model(8, 33, n, 4);
    let truth = synth::shepp_logan(n);
    let x = Array2::from_shape_fn((n, n), |idx| Complex64::new(truth[idx], 0.0));
    c.bench_function("predictor_step_64", |b| {
        b.iter(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut pair = ImagePair::from_complex(&x);
            predictor_step(&mut pair, &m, 0.6, 0.5, &mut rng).unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_filterbank,
    bench_score_and_denoise,
    bench_prox,
    bench_predictor
);
criterion_main!(benches);
