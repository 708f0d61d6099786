use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FeatureConfig, FeatureMatrix, Frames};
use crate::error::{Error, Result};

/// Filter energies are clamped here before taking the log.
pub const LOG_ENERGY_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters equally spaced on the mel scale, applied to the power
/// spectrum of a zero-padded frame.
pub struct MelFilterbank {
    fft: Arc<dyn Fft<f64>>,
    fft_len: usize,
    frame_len: usize,
    centers_hz: Vec<f64>,
    // (first bin, weights) per filter
    filters: Vec<(usize, Vec<f64>)>,
}

impl std::fmt::Debug for MelFilterbank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelFilterbank")
            .field("fft_len", &self.fft_len)
            .field("frame_len", &self.frame_len)
            .field("centers_hz", &self.centers_hz)
            .finish()
    }
}

impl MelFilterbank {
    pub fn new(
        num_filters: usize,
        min_freq: f64,
        max_freq: f64,
        frame_len: usize,
        sample_rate: u32,
    ) -> Self {
        let fft_len = frame_len.next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(fft_len);
        let lo_mel = hz_to_mel(min_freq);
        let hi_mel = hz_to_mel(max_freq);
        let step = (hi_mel - lo_mel) / (num_filters + 1) as f64;
        let edges: Vec<f64> = (0..num_filters + 2)
            .map(|i| mel_to_hz(lo_mel + step * i as f64))
            .collect();
        let bin_hz = sample_rate as f64 / fft_len as f64;
        let num_bins = fft_len / 2 + 1;

        let filters = edges
            .windows(3)
            .map(|e| {
                let (lo, mid, hi) = (e[0], e[1], e[2]);
                let weights: Vec<(usize, f64)> = (0..num_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(first, _)) => (first, weights.into_iter().map(|(_, w)| w).collect()),
                    None => (0, Vec::new()),
                }
            })
            .collect();

        Self {
            fft,
            fft_len,
            frame_len,
            centers_hz: edges[1..=num_filters].to_vec(),
            filters,
        }
    }

    pub fn for_config(config: &FeatureConfig, frame_len: usize, sample_rate: u32) -> Self {
        Self::new(
            config.num_filters,
            config.min_freq,
            config.max_freq,
            frame_len,
            sample_rate,
        )
    }

    pub fn num_filters(&self) -> usize {
        self.filters.len()
    }

    pub fn fft_len(&self) -> usize {
        self.fft_len
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// `|X_k|^2` for bins `0..=fft_len/2`.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        debug_assert_eq!(frame.len(), self.frame_len);
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(self.fft_len)
            .collect();
        self.fft.process(&mut buf);
        buf[..self.fft_len / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
    }

    /// Raw (unfloored) filter energies of one frame.
    pub fn energies(&self, frame: &[f64]) -> Vec<f64> {
        let power = self.power_spectrum(frame);
        self.filters
            .iter()
            .map(|(first, w)| w.iter().zip(&power[*first..]).map(|(w, p)| w * p).sum())
            .collect()
    }
}

/// Orthonormal DCT-II coefficient `k` of `input`.
pub fn dct_ii(input: &[f64], k: usize) -> f64 {
    let n = input.len() as f64;
    let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
    scale
        * input
            .iter()
            .enumerate()
            .map(|(m, x)| x * (PI * k as f64 * (m as f64 + 0.5) / n).cos())
            .sum::<f64>()
}

/// MFCCs 1..=num_ceps of every frame (C0 is dropped).
pub fn mfcc(frames: &Frames, config: &FeatureConfig) -> Result<FeatureMatrix> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::TooFewFrames { needed: 1, got: 0 });
    }
    let bank = MelFilterbank::for_config(config, frames.frame_len(), frames.sample_rate());
    let num_filters = config.num_filters as f64;
    // cos table: rows are coefficients 1..=num_ceps
    let basis: Vec<Vec<f64>> = (1..=config.num_ceps)
        .map(|k| {
            (0..config.num_filters)
                .map(|m| (2.0 / num_filters).sqrt() * (PI * k as f64 * (m as f64 + 0.5) / num_filters).cos())
                .collect()
        })
        .collect();

    let mut values = Vec::with_capacity(frames.len() * config.num_ceps);
    for frame in frames.iter() {
        let log_e: Vec<f64> = bank
            .energies(frame)
            .into_iter()
            .map(|e| e.max(LOG_ENERGY_FLOOR).ln())
            .collect();
        values.extend(
            basis
                .iter()
                .map(|row| row.iter().zip(&log_e).map(|(c, l)| c * l).sum::<f64>()),
        );
    }
    FeatureMatrix::from_frame_major(config.num_ceps, values, config.fingerprint())
}

/// First-order frame differences; the first column is zero.
pub fn delta(features: &FeatureMatrix) -> Result<FeatureMatrix> {
    let n = features.num_frames();
    if n < 2 {
        return Err(Error::TooFewFrames { needed: 2, got: n });
    }
    let dim = features.dim();
    let mut values = vec![0.0; dim];
    values.reserve(dim * (n - 1));
    for t in 1..n {
        let (prev, cur) = (features.frame(t - 1), features.frame(t));
        values.extend(cur.iter().zip(prev).map(|(c, p)| c - p));
    }
    FeatureMatrix::from_frame_major(dim, values, features.fingerprint())
}
