use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use disparity_id::divergence::{rescale, residuals_from_logs, trim};
use disparity_id::{
    build_features, em_fit, AudioSignal, ClassifierConfig, DivergenceSpec, EmConfig, FeatureConfig,
    FeatureMatrix,
};

fn noise_signal(seconds: f64, rate: u32) -> AudioSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = (seconds * rate as f64) as usize;
    let samples = (0..n)
        .map(|i| (i as f64 * 0.07).sin() * 0.5 + rng.random_range(-0.3..0.3))
        .collect();
    AudioSignal::new(samples, rate).unwrap()
}

fn random_features(frames: usize, dim: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..frames * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    FeatureMatrix::from_frame_major(dim, values, 0).unwrap()
}

fn bench_mfcc(c: &mut Criterion) {
    let signal = noise_signal(2.0, 8000);
    let config = FeatureConfig::fs_one();
    c.bench_function("mfcc_2s_8khz", |b| {
        b.iter(|| build_features(black_box(&signal), &config).unwrap())
    });
}

fn bench_em(c: &mut Criterion) {
    let x = random_features(1000, 20, 2);
    let config = EmConfig {
        num_components: 8,
        max_iters: 20,
        ..EmConfig::speaker_default()
    };
    c.bench_function("em_1000x20_k8", |b| b.iter(|| em_fit(black_box(&x), &config).unwrap()));
}

fn bench_scoring(c: &mut Criterion) {
    let mut config = ClassifierConfig::default();
    config.em_speaker.num_components = 8;
    config.em_speaker.max_iters = 20;
    config.features = FeatureConfig::fs_one();
    let dim = config.features.feature_dim();
    let models: Vec<_> = (0..10)
        .map(|k| {
            let x = random_features(600, dim, 10 + k)
                .with_fingerprint(config.features.fingerprint());
            disparity_id::train_speaker(&format!("spk{k:02}"), &x, &config).unwrap()
        })
        .collect();
    let test = random_features(300, dim, 99).with_fingerprint(config.features.fingerprint());
    config.divergence = DivergenceSpec::default();
    c.bench_function("identify_10_speakers_300_frames", |b| {
        b.iter(|| disparity_id::identify(&models, black_box(&test), &config).unwrap())
    });
}

fn bench_trimming(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let log_g: Vec<f64> = (0..5000).map(|_| rng.random_range(-10.0..0.0)).collect();
    let log_f: Vec<f64> = (0..5000).map(|_| rng.random_range(-10.0..0.0)).collect();
    let set = residuals_from_logs(&log_g, &log_f).unwrap();
    c.bench_function("rescale_trim_5000", |b| {
        b.iter(|| trim(&rescale(black_box(&set), 0.2), 0.05, 0.1).unwrap())
    });
}

criterion_group!(benches, bench_mfcc, bench_em, bench_scoring, bench_trimming);
criterion_main!(benches);
