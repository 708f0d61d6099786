//! Independent oracles and data generators shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Normal};

use disparity_id::{
    em_fit, pct_compute, EmConfig, FeatureConfig, FeatureMatrix, GmmModel, ModelArchive, PctMatrix,
    SpeakerModel,
};

/// `log Σ_j w_j N(x; μ_j, diag σ²_j)` by direct summation after shifting by
/// the largest exponent.
pub fn naive_log_density(model: &GmmModel, x: &[f64]) -> f64 {
    let terms: Vec<f64> = (0..model.num_components())
        .map(|j| {
            let mut t = model.weights()[j].ln();
            for d in 0..x.len() {
                let v = model.variances()[j][d];
                let z = x[d] - model.means()[j][d];
                t -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + z * z / v);
            }
            t
        })
        .collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

pub fn rotate(p: &PctMatrix, x: &[f64]) -> Vec<f64> {
    (0..p.dim())
        .map(|i| p.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Frames from a random mixture of `components` Gaussians.
pub fn mixture_data<R: Rng>(rng: &mut R, dim: usize, components: usize, frames: usize) -> FeatureMatrix {
    let centres: Vec<Vec<f64>> = (0..components)
        .map(|_| (0..dim).map(|_| rng.random_range(-6.0..6.0)).collect())
        .collect();
    let scales: Vec<Vec<f64>> = (0..components)
        .map(|_| (0..dim).map(|_| rng.random_range(0.3..2.0)).collect())
        .collect();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let values: Vec<f64> = (0..frames)
        .flat_map(|_| {
            let k = rng.random_range(0..components);
            (0..dim)
                .map(|d| centres[k][d] + scales[k][d] * normal.sample(rng))
                .collect::<Vec<_>>()
        })
        .collect();
    FeatureMatrix::from_frame_major(dim, values, 0).unwrap()
}

/// Gaussian frames pushed through a random linear map.
pub fn correlated_data<R: Rng>(rng: &mut R, dim: usize, frames: usize) -> FeatureMatrix {
    let mix: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let values: Vec<f64> = (0..frames)
        .flat_map(|_| {
            let z: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
            mix.iter()
                .map(|row| 3.0 + row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>())
                .collect::<Vec<_>>()
        })
        .collect();
    FeatureMatrix::from_frame_major(dim, values, 0).unwrap()
}

/// Per-dimension mean and maximum-likelihood variance (denominator M).
pub fn moments(x: &FeatureMatrix) -> (Vec<f64>, Vec<f64>) {
    let m = x.num_frames() as f64;
    let mut mean = vec![0.0; x.dim()];
    for f in x.frames() {
        for (a, v) in mean.iter_mut().zip(f) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let mut var = vec![0.0; x.dim()];
    for f in x.frames() {
        for d in 0..x.dim() {
            var[d] += (f[d] - mean[d]).powi(2);
        }
    }
    var.iter_mut().for_each(|a| *a /= m);
    (mean, var)
}

/// Sample covariance with denominator M - 1.
pub fn covariance(x: &FeatureMatrix) -> Vec<Vec<f64>> {
    let (mean, _) = moments(x);
    let d = x.dim();
    let mut cov = vec![vec![0.0; d]; d];
    for f in x.frames() {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (f[i] - mean[i]) * (f[j] - mean[j]);
            }
        }
    }
    let denom = (x.num_frames() - 1) as f64;
    cov.iter_mut().flatten().for_each(|v| *v /= denom);
    cov
}

/// An archive of 1 to 5 speakers with fitted models and rotations under a
/// randomly perturbed feature configuration.
pub fn random_archive<R: Rng>(rng: &mut R) -> ModelArchive {
    let mut features = if rng.random_bool(0.5) {
        FeatureConfig::fs_one()
    } else {
        FeatureConfig::fs_two()
    };
    features.window_size = rng.random_range(0.015..0.04);
    features.min_freq = rng.random_range(0.0..300.0);
    let dim = rng.random_range(2..6);
    let n = rng.random_range(1..6);
    let models = (0..n)
        .map(|i| {
            let x = mixture_data(rng, dim, 2, 80);
            let pct = pct_compute(&x).unwrap();
            let em = EmConfig {
                num_components: rng.random_range(1..4),
                max_iters: 10,
                seed: rng.random(),
                ..EmConfig::speaker_default()
            };
            SpeakerModel {
                speaker_id: format!("spk{i:02}"),
                gmm: em_fit(&x, &em).unwrap(),
                pct,
                feature_fingerprint: features.fingerprint(),
            }
        })
        .collect();
    let training = format!("seed = {}\nbeta = {}\n", rng.random::<u32>(), rng.random_range(0.1..1.0));
    ModelArchive::new(features, training, models).unwrap()
}
