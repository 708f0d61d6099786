//! Audio front end: WAV ingestion, framing, MFCC and delta-MFCC features.
//!
//! Features are stored frame-major: each column of the conceptual `d × M`
//! matrix (one frame) is a contiguous slice.

mod framing;
mod mfcc;
mod wav;

pub use framing::{frame_signal, Frames};
pub use mfcc::{delta, dct_ii, hz_to_mel, mel_to_hz, mfcc, MelFilterbank, LOG_ENERGY_FLOOR};
pub use wav::{load_wav, parse_wav, write_wav_i16};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("audio signal has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("audio signal contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WindowFunction {
    Hamming,
}

impl WindowFunction {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowFunction::Hamming => {
                if len == 1 {
                    return vec![1.0];
                }
                let denom = (len - 1) as f64;
                (0..len)
                    .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / denom).cos())
                    .collect()
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowFunction::Hamming => "hamming",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "hamming" => Some(WindowFunction::Hamming),
            _ => None,
        }
    }
}

/// Framing and filterbank parameters. Times are in seconds, frequencies in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub window_size: f64,
    pub window_shift: f64,
    pub num_filters: usize,
    pub num_ceps: usize,
    pub min_freq: f64,
    pub max_freq: f64,
    pub use_delta: bool,
    pub pre_emphasis: f64,
    pub window_function: WindowFunction,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self::fs_one()
    }
}

impl FeatureConfig {
    /// 20 MFCCs with 20 delta MFCCs stacked beneath them.
    pub fn fs_one() -> Self {
        Self {
            window_size: 0.020,
            window_shift: 0.010,
            num_filters: 26,
            num_ceps: 20,
            min_freq: 0.0,
            max_freq: 4000.0,
            use_delta: true,
            pre_emphasis: 0.97,
            window_function: WindowFunction::Hamming,
        }
    }

    /// 39 MFCCs (coefficients 1..=39 of a 40-filter bank), no deltas.
    pub fn fs_two() -> Self {
        Self {
            num_filters: 40,
            num_ceps: 39,
            use_delta: false,
            ..Self::fs_one()
        }
    }

    /// Number of feature rows this config produces.
    pub fn feature_dim(&self) -> usize {
        if self.use_delta {
            2 * self.num_ceps
        } else {
            self.num_ceps
        }
    }

    pub fn window_len(&self, sample_rate: u32) -> usize {
        (self.window_size * sample_rate as f64).round() as usize
    }

    pub fn shift_len(&self, sample_rate: u32) -> usize {
        (self.window_shift * sample_rate as f64).round() as usize
    }

    /// Checks the parameters that do not depend on the audio.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.window_size.is_finite() && self.window_size > 0.0) {
            return bad(format!("window_size must be positive, got {}", self.window_size));
        }
        if !(self.window_shift.is_finite()
            && self.window_shift > 0.0
            && self.window_shift <= self.window_size)
        {
            return bad(format!(
                "window_shift must satisfy 0 < shift <= window_size, got {}",
                self.window_shift
            ));
        }
        if !(self.min_freq.is_finite() && self.max_freq.is_finite())
            || self.min_freq < 0.0
            || self.min_freq >= self.max_freq
        {
            return bad(format!(
                "frequency band must satisfy 0 <= min < max, got [{}, {}]",
                self.min_freq, self.max_freq
            ));
        }
        if self.num_filters < 2 {
            return bad(format!("num_filters must be at least 2, got {}", self.num_filters));
        }
        // C0 is dropped, so coefficients 1..=num_ceps must exist in a bank of num_filters.
        if self.num_ceps == 0 || self.num_ceps >= self.num_filters {
            return bad(format!(
                "num_ceps must satisfy 1 <= num_ceps < num_filters ({}), got {}",
                self.num_filters, self.num_ceps
            ));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return bad(format!("pre_emphasis must be in [0, 1), got {}", self.pre_emphasis));
        }
        Ok(())
    }

    /// Checks the parameters against a concrete sample rate.
    pub fn validate_for(&self, sample_rate: u32) -> Result<()> {
        self.validate()?;
        let nyquist = sample_rate as f64 / 2.0;
        if self.max_freq > nyquist {
            return Err(Error::InvalidConfig(format!(
                "max_freq {} exceeds the Nyquist frequency {} of {} Hz audio",
                self.max_freq, nyquist, sample_rate
            )));
        }
        if self.window_len(sample_rate) < 2 {
            return Err(Error::InvalidConfig(format!(
                "window of {} s is shorter than two samples at {} Hz",
                self.window_size, sample_rate
            )));
        }
        if self.shift_len(sample_rate) == 0 {
            return Err(Error::InvalidConfig(format!(
                "window shift of {} s rounds to zero samples at {} Hz",
                self.window_shift, sample_rate
            )));
        }
        Ok(())
    }

    /// Stable hash of every parameter, used to detect models and test
    /// features produced under different front-end settings.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(b"feature-config/v1");
        hasher.update(self.window_size.to_bits().to_le_bytes());
        hasher.update(self.window_shift.to_bits().to_le_bytes());
        hasher.update((self.num_filters as u64).to_le_bytes());
        hasher.update((self.num_ceps as u64).to_le_bytes());
        hasher.update(self.min_freq.to_bits().to_le_bytes());
        hasher.update(self.max_freq.to_bits().to_le_bytes());
        hasher.update([self.use_delta as u8]);
        hasher.update(self.pre_emphasis.to_bits().to_le_bytes());
        hasher.update(self.window_function.name().as_bytes());
        let digest = hasher.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(head)
    }
}

/// A `dim × num_frames` matrix of per-frame feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    num_frames: usize,
    values: Vec<f64>,
    fingerprint: u64,
}

impl FeatureMatrix {
    /// Builds a matrix from frame-major values (`values[t * dim + r]`).
    pub fn from_frame_major(dim: usize, values: Vec<f64>, fingerprint: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("feature dimension must be positive".into()));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::InvalidInput(format!(
                "{} values do not divide into frames of dimension {}",
                values.len(),
                dim
            )));
        }
        let num_frames = values.len() / dim;
        if num_frames == 0 {
            return Err(Error::TooFewFrames { needed: 1, got: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("feature matrix contains non-finite values".into()));
        }
        Ok(Self {
            dim,
            num_frames,
            values,
            fingerprint,
        })
    }

    pub fn from_frames<I, F>(dim: usize, frames: I, fingerprint: u64) -> Result<Self>
    where
        I: IntoIterator<Item = F>,
        F: AsRef<[f64]>,
    {
        let mut values = Vec::new();
        for frame in frames {
            let frame = frame.as_ref();
            if frame.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: frame.len(),
                });
            }
            values.extend_from_slice(frame);
        }
        Self::from_frame_major(dim, values, fingerprint)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn with_fingerprint(mut self, fingerprint: u64) -> Self {
        self.fingerprint = fingerprint;
        self
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn get(&self, row: usize, frame: usize) -> f64 {
        self.values[frame * self.dim + row]
    }

    pub fn as_frame_major(&self) -> &[f64] {
        &self.values
    }

    /// Appends the frames of `other` after those of `self`.
    pub fn concat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        if other.fingerprint != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                model: self.fingerprint,
                features: other.fingerprint,
            });
        }
        let mut values = Vec::with_capacity(self.values.len() + other.values.len());
        values.extend_from_slice(&self.values);
        values.extend_from_slice(&other.values);
        Ok(FeatureMatrix {
            dim: self.dim,
            num_frames: self.num_frames + other.num_frames,
            values,
            fingerprint: self.fingerprint,
        })
    }

    /// Concatenates a non-empty list of matrices frame-wise.
    pub fn concat_all<'a, I>(parts: I) -> Result<FeatureMatrix>
    where
        I: IntoIterator<Item = &'a FeatureMatrix>,
    {
        let mut iter = parts.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidInput("no feature matrices to concatenate".into()))?;
        let mut values = first.values.clone();
        let mut num_frames = first.num_frames;
        for m in iter {
            if m.dim != first.dim {
                return Err(Error::DimensionMismatch {
                    expected: first.dim,
                    found: m.dim,
                });
            }
            if m.fingerprint != first.fingerprint {
                return Err(Error::FingerprintMismatch {
                    model: first.fingerprint,
                    features: m.fingerprint,
                });
            }
            values.extend_from_slice(&m.values);
            num_frames += m.num_frames;
        }
        Ok(FeatureMatrix {
            dim: first.dim,
            num_frames,
            values,
            fingerprint: first.fingerprint,
        })
    }

    /// Stacks the rows of `lower` beneath the rows of `self`, frame by frame.
    pub fn stack_rows(&self, lower: &FeatureMatrix) -> Result<FeatureMatrix> {
        if lower.num_frames != self.num_frames {
            return Err(Error::InvalidInput(format!(
                "cannot stack matrices with {} and {} frames",
                self.num_frames, lower.num_frames
            )));
        }
        let dim = self.dim + lower.dim;
        let mut values = Vec::with_capacity(dim * self.num_frames);
        for (top, bottom) in self.frames().zip(lower.frames()) {
            values.extend_from_slice(top);
            values.extend_from_slice(bottom);
        }
        Ok(FeatureMatrix {
            dim,
            num_frames: self.num_frames,
            values,
            fingerprint: self.fingerprint,
        })
    }

    /// Per-row sample mean.
    pub fn row_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for frame in self.frames() {
            for (m, v) in mean.iter_mut().zip(frame) {
                *m += v;
            }
        }
        let n = self.num_frames as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Per-row variance with denominator `num_frames`.
    pub fn row_variances(&self) -> Vec<f64> {
        let mean = self.row_means();
        let mut var = vec![0.0; self.dim];
        for frame in self.frames() {
            for ((s, v), m) in var.iter_mut().zip(frame).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let n = self.num_frames as f64;
        var.iter_mut().for_each(|s| *s /= n);
        var
    }
}

/// Full front end: framing, MFCC and (optionally) deltas stacked beneath.
pub fn build_features(signal: &AudioSignal, config: &FeatureConfig) -> Result<FeatureMatrix> {
    let frames = frame_signal(signal, config)?;
    let ceps = mfcc(&frames, config)?;
    if config.use_delta {
        let deltas = delta(&ceps)?;
        ceps.stack_rows(&deltas)
    } else {
        Ok(ceps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, sample_rate: u32, seconds: f64, amp: f64) -> AudioSignal {
        let n = (seconds * sample_rate as f64) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / sample_rate as f64).sin())
            .collect();
        AudioSignal::new(samples, sample_rate).unwrap()
    }

    fn chirpy(sample_rate: u32, seconds: f64) -> AudioSignal {
        let n = (seconds * sample_rate as f64) as usize;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / sample_rate as f64;
                0.3 * (2.0 * std::f64::consts::PI * 440.0 * t).sin()
                    + 0.2 * (2.0 * std::f64::consts::PI * (900.0 + 800.0 * t) * t).sin()
                    + 0.1 * (2.0 * std::f64::consts::PI * 2500.0 * t).cos()
            })
            .collect();
        AudioSignal::new(samples, sample_rate).unwrap()
    }

    #[test]
    fn fs_one_has_forty_rows() {
        let sig = chirpy(8000, 0.5);
        let feats = build_features(&sig, &FeatureConfig::fs_one()).unwrap();
        assert_eq!(feats.dim(), 40);
    }

    #[test]
    fn fs_two_has_thirty_nine_rows() {
        let sig = chirpy(8000, 0.5);
        let feats = build_features(&sig, &FeatureConfig::fs_two()).unwrap();
        assert_eq!(feats.dim(), 39);
    }

    #[test]
    fn thirteen_ceps_without_delta() {
        let cfg = FeatureConfig {
            num_ceps: 13,
            use_delta: false,
            ..FeatureConfig::fs_one()
        };
        let feats = build_features(&chirpy(16000, 0.3), &cfg).unwrap();
        assert_eq!(feats.dim(), 13);
        assert_eq!(feats.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn delta_rows_keep_frame_count() {
        let sig = chirpy(8000, 0.4);
        let with = build_features(&sig, &FeatureConfig::fs_one()).unwrap();
        let without = build_features(
            &sig,
            &FeatureConfig {
                use_delta: false,
                ..FeatureConfig::fs_one()
            },
        )
        .unwrap();
        assert_eq!(with.num_frames(), without.num_frames());
        for t in 0..with.num_frames() {
            assert_eq!(&with.frame(t)[..20], without.frame(t));
        }
        assert!(with.frame(0)[20..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn positive_scaling_leaves_ceps_unchanged() {
        let cfg = FeatureConfig {
            use_delta: false,
            ..FeatureConfig::fs_one()
        };
        let sig = chirpy(8000, 0.3);
        let doubled =
            AudioSignal::new(sig.samples().iter().map(|s| s * 2.0).collect(), 8000).unwrap();
        let a = build_features(&sig, &cfg).unwrap();
        let b = build_features(&doubled, &cfg).unwrap();
        for (x, y) in a.as_frame_major().iter().zip(b.as_frame_major()) {
            assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn build_is_bit_deterministic() {
        let sig = tone(700.0, 16000, 0.25, 0.4);
        let cfg = FeatureConfig {
            max_freq: 8000.0,
            ..FeatureConfig::fs_one()
        };
        let a = build_features(&sig, &cfg).unwrap();
        let b = build_features(&sig, &cfg).unwrap();
        let bits = |m: &FeatureMatrix| m.as_frame_major().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn config_validation() {
        let ok = FeatureConfig::fs_one();
        assert!(ok.validate_for(8000).is_ok());
        assert!(ok.validate_for(6000).is_err(), "max_freq above Nyquist");
        let bad_shift = FeatureConfig {
            window_shift: 0.03,
            ..ok.clone()
        };
        assert!(bad_shift.validate().is_err());
        let bad_band = FeatureConfig {
            min_freq: 4000.0,
            ..ok.clone()
        };
        assert!(bad_band.validate().is_err());
        let too_many_ceps = FeatureConfig {
            num_ceps: 26,
            ..ok.clone()
        };
        assert!(too_many_ceps.validate().is_err());
        let bad_pre = FeatureConfig {
            pre_emphasis: 1.0,
            ..ok
        };
        assert!(bad_pre.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_every_field() {
        let base = FeatureConfig::fs_one();
        let variants = [
            FeatureConfig { window_size: 0.03, ..base.clone() },
            FeatureConfig { window_shift: 0.015, ..base.clone() },
            FeatureConfig { num_filters: 27, ..base.clone() },
            FeatureConfig { num_ceps: 19, ..base.clone() },
            FeatureConfig { min_freq: 200.0, ..base.clone() },
            FeatureConfig { max_freq: 3900.0, ..base.clone() },
            FeatureConfig { use_delta: false, ..base.clone() },
            FeatureConfig { pre_emphasis: 0.95, ..base.clone() },
        ];
        for v in &variants {
            assert_ne!(v.fingerprint(), base.fingerprint(), "{v:?}");
        }
        assert_eq!(base.fingerprint(), FeatureConfig::fs_one().fingerprint());
    }

    #[test]
    fn matrix_rejects_non_finite() {
        assert!(FeatureMatrix::from_frame_major(2, vec![0.0, f64::NAN], 0).is_err());
        assert!(FeatureMatrix::from_frame_major(2, vec![], 0).is_err());
        assert!(FeatureMatrix::from_frame_major(2, vec![1.0, 2.0, 3.0], 0).is_err());
    }

    #[test]
    fn concat_checks_fingerprints() {
        let a = FeatureMatrix::from_frame_major(1, vec![1.0], 1).unwrap();
        let b = FeatureMatrix::from_frame_major(1, vec![2.0], 2).unwrap();
        assert!(matches!(a.concat(&b), Err(Error::FingerprintMismatch { .. })));
        let c = FeatureMatrix::from_frame_major(1, vec![3.0, 4.0], 1).unwrap();
        let joined = FeatureMatrix::concat_all([&a, &c]).unwrap();
        assert_eq!(joined.as_frame_major(), &[1.0, 3.0, 4.0]);
    }
}
