//! Seeded synthetic corpora for desk-scale verification.
//!
//! Two depths are provided. [`synth_corpus`] injects feature vectors drawn
//! from known per-speaker GMMs, which exercises everything downstream of
//! the front end against exact ground truth. [`synth_audio_corpus`] renders
//! waveforms as sums of sinusoids, so window length and filterbank band
//! actually change what a classifier sees.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{CorpusManifest, ManifestEntry, UtteranceSource};
use crate::error::{Error, Result};
use crate::features::{write_wav_i16, AudioSignal, FeatureMatrix};
use crate::gmm::GmmModel;
use crate::pct::PctMatrix;

fn speaker_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(2);
    (1..=n).map(|k| format!("spk{k:0width$}")).collect()
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    pub frames_per_utterance: usize,
    pub seed: u64,
    /// Fraction of frames replaced by outliers in every utterance after the
    /// first `clean_utterances` of each speaker.
    pub contamination_frac: f64,
    pub clean_utterances: usize,
    pub dim: usize,
    pub components: usize,
    /// Standard deviation of speaker centres around the origin.
    pub speaker_spread: f64,
    /// Standard deviation of component means around their speaker centre.
    pub component_spread: f64,
    /// Component variances are log-uniform on this range.
    pub variance_range: (f64, f64),
    /// Rotate each speaker by its own random orthonormal matrix, so features
    /// are correlated and diagonal models fit poorly without PCT.
    pub rotate: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_speakers: 10,
            utterances_per_speaker: 10,
            frames_per_utterance: 100,
            seed: 0,
            contamination_frac: 0.0,
            clean_utterances: 6,
            dim: 6,
            components: 3,
            speaker_spread: 1.5,
            component_spread: 1.0,
            variance_range: (0.2, 1.5),
            rotate: false,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 || self.frames_per_utterance == 0 || self.dim == 0 || self.components == 0 {
            return Err(Error::InvalidConfig(
                "speaker, frame, dimension and component counts must be at least 1".into(),
            ));
        }
        if self.utterances_per_speaker < 2 {
            return Err(Error::InvalidConfig("each speaker needs at least 2 utterances".into()));
        }
        if !(0.0..1.0).contains(&self.contamination_frac) {
            return Err(Error::InvalidConfig(format!(
                "contamination fraction must lie in [0, 1), got {}",
                self.contamination_frac
            )));
        }
        let (lo, hi) = self.variance_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad variance range ({lo}, {hi})")));
        }
        if !(self.speaker_spread >= 0.0 && self.component_spread >= 0.0) {
            return Err(Error::InvalidConfig("spreads must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Ground truth for one synthetic speaker: `x = centre + Qᵀ z`, `z ~ latent`.
#[derive(Debug, Clone)]
pub struct SyntheticSpeaker {
    pub speaker_id: String,
    pub latent: GmmModel,
    pub centre: Vec<f64>,
    pub rotation: Option<PctMatrix>,
}

impl SyntheticSpeaker {
    /// Exact log density of the generating distribution.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let shifted: Vec<f64> = x.iter().zip(&self.centre).map(|(a, c)| a - c).collect();
        match &self.rotation {
            Some(q) => self.latent.log_density(&q.rotate(&shifted)),
            None => self.latent.log_density(&shifted),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        let d = self.centre.len();
        self.latent
            .sample(rng, n)
            .into_iter()
            .map(|z| {
                let mut x = self.centre.clone();
                match &self.rotation {
                    Some(q) => {
                        for (r, zr) in z.iter().enumerate() {
                            for (xi, qi) in x.iter_mut().zip(q.row(r)) {
                                *xi += zr * qi;
                            }
                        }
                    }
                    None => x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi += zi),
                }
                debug_assert_eq!(x.len(), d);
                x
            })
            .collect()
    }

    /// Component means in feature space.
    fn feature_means(&self) -> Vec<Vec<f64>> {
        self.latent
            .means()
            .iter()
            .map(|m| {
                let mut x = self.centre.clone();
                match &self.rotation {
                    Some(q) => {
                        for (r, mr) in m.iter().enumerate() {
                            for (xi, qi) in x.iter_mut().zip(q.row(r)) {
                                *xi += mr * qi;
                            }
                        }
                    }
                    None => x.iter_mut().zip(m).for_each(|(xi, mi)| *xi += mi),
                }
                x
            })
            .collect()
    }
}

/// Random orthonormal matrix by Gram-Schmidt on Gaussian vectors.
fn random_rotation<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Result<PctMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        for _ in 0..2 {
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    PctMatrix::from_parts(dim, rows.concat(), vec![1.0; dim])
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub manifest: CorpusManifest,
    pub speakers: Vec<SyntheticSpeaker>,
    /// Distribution the contaminating frames are drawn from.
    pub outlier: GmmModel,
}

/// Feature-injection corpus. Same config, same corpus, bit for bit.
pub fn synth_corpus(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.dim;
    let (vlo, vhi) = config.variance_range;
    let mut speakers = Vec::with_capacity(config.num_speakers);
    for id in speaker_ids(config.num_speakers) {
        let centre: Vec<f64> = (0..d).map(|_| config.speaker_spread * normal(&mut rng)).collect();
        let raw_w: Vec<f64> = (0..config.components).map(|_| rng.random_range(0.5..1.5)).collect();
        let total: f64 = raw_w.iter().sum();
        let mut weights: Vec<f64> = raw_w.iter().map(|w| w / total).collect();
        let last: f64 = weights[..weights.len() - 1].iter().sum();
        *weights.last_mut().unwrap() = 1.0 - last;
        let means = (0..config.components)
            .map(|_| (0..d).map(|_| config.component_spread * normal(&mut rng)).collect())
            .collect();
        let variances = (0..config.components)
            .map(|_| {
                (0..d)
                    .map(|_| (vlo.ln() + rng.random::<f64>() * (vhi.ln() - vlo.ln())).exp())
                    .collect()
            })
            .collect();
        let latent = GmmModel::new(weights, means, variances)?;
        let rotation = if config.rotate {
            Some(random_rotation(&mut rng, d)?)
        } else {
            None
        };
        speakers.push(SyntheticSpeaker {
            speaker_id: id,
            latent,
            centre,
            rotation,
        });
    }

    // Outliers sit at least ten standard deviations beyond every speaker
    // component mean in every coordinate.
    let max_coord = speakers
        .iter()
        .flat_map(|s| s.feature_means())
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let sigma = vhi.sqrt().max(1.0);
    let outlier = GmmModel::single(vec![max_coord + 20.0 * sigma; d], vec![1.0; d])?;

    let n_bad = (config.contamination_frac * config.frames_per_utterance as f64).round() as usize;
    let mut entries = Vec::new();
    for s in &speakers {
        for u in 1..=config.utterances_per_speaker {
            let mut frames = s.sample(&mut rng, config.frames_per_utterance);
            if u > config.clean_utterances && n_bad > 0 {
                let positions = sample_indices(&mut rng, frames.len(), n_bad);
                let bad = outlier.sample(&mut rng, n_bad);
                for (pos, x) in positions.iter().zip(bad) {
                    frames[pos] = x;
                }
            }
            let fm = FeatureMatrix::from_frames(d, &frames, 0)?;
            entries.push(ManifestEntry::new(
                s.speaker_id.clone(),
                u as u32,
                UtteranceSource::Features(Arc::new(fm)),
            ));
        }
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("synthetic".into(), "features".into());
    metadata.insert("seed".into(), config.seed.to_string());
    metadata.insert("contamination".into(), config.contamination_frac.to_string());
    Ok(SyntheticCorpus {
        manifest: CorpusManifest::new(entries, metadata)?,
        speakers,
        outlier,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSynthConfig {
    pub num_speakers: usize,
    pub utterances_per_speaker: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Size of the shared inventory of spectral states.
    pub num_states: usize,
    pub partials_per_state: usize,
    /// Log-scale spread of each speaker's frequency warping.
    pub speaker_variation: f64,
    /// Log-scale frequency jitter per rendered segment.
    pub jitter: f64,
    /// Standard deviation of additive white noise, relative to unit partials.
    pub noise_level: f64,
}

impl Default for AudioSynthConfig {
    fn default() -> Self {
        Self {
            num_speakers: 10,
            utterances_per_speaker: 10,
            duration_secs: 1.0,
            sample_rate: 8000,
            seed: 0,
            num_states: 6,
            partials_per_state: 3,
            speaker_variation: 0.08,
            jitter: 0.02,
            noise_level: 0.3,
        }
    }
}

impl AudioSynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_speakers == 0 || self.num_states == 0 || self.partials_per_state == 0 {
            return Err(Error::InvalidConfig("speaker, state and partial counts must be at least 1".into()));
        }
        if self.utterances_per_speaker < 2 {
            return Err(Error::InvalidConfig("each speaker needs at least 2 utterances".into()));
        }
        if !(self.duration_secs > 0.0 && self.duration_secs.is_finite()) || self.sample_rate < 1000 {
            return Err(Error::InvalidConfig("duration must be positive and sample rate at least 1000 Hz".into()));
        }
        if !(self.speaker_variation >= 0.0 && self.jitter >= 0.0 && self.noise_level >= 0.0) {
            return Err(Error::InvalidConfig("variation, jitter and noise must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One spectral state: partial frequencies (Hz) and amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct VoiceState {
    pub weight: f64,
    pub partials: Vec<(f64, f64)>,
}

/// A synthetic talker: a weighted set of spectral states.
#[derive(Debug, Clone, PartialEq)]
pub struct VoiceModel {
    pub speaker_id: String,
    pub states: Vec<VoiceState>,
}

impl VoiceModel {
    fn pick_state(&self, u: f64) -> &VoiceState {
        let mut acc = 0.0;
        for s in &self.states {
            acc += s.weight;
            if u < acc {
                return s;
            }
        }
        self.states.last().expect("voice has states")
    }

    /// Renders a waveform from 40–120 ms segments, each one state with
    /// jittered partials and short linear ramps at its edges.
    pub fn render<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        duration_secs: f64,
        sample_rate: u32,
        jitter: f64,
        noise_level: f64,
    ) -> Result<AudioSignal> {
        let sr = sample_rate as f64;
        let n = (duration_secs * sr).round() as usize;
        let nyquist_guard = 0.45 * sr;
        let ramp = ((0.005 * sr) as usize).max(1);
        let mut samples = vec![0.0; n];
        let mut start = 0;
        while start < n {
            let len = ((rng.random_range(0.040..0.120) * sr) as usize).max(1).min(n - start);
            let state = self.pick_state(rng.random::<f64>());
            for &(freq, amp) in &state.partials {
                let f = (freq * (jitter * normal(rng)).exp()).clamp(50.0, nyquist_guard);
                let phase = rng.random_range(0.0..2.0 * PI);
                let w = 2.0 * PI * f / sr;
                for (i, s) in samples[start..start + len].iter_mut().enumerate() {
                    let edge = (i.min(len - 1 - i) as f64 / ramp as f64).min(1.0);
                    *s += edge * amp * (w * i as f64 + phase).sin();
                }
            }
            start += len;
        }
        for s in &mut samples {
            *s += noise_level * normal(rng);
        }
        let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            samples.iter_mut().for_each(|s| *s *= 0.8 / peak);
        }
        AudioSignal::new(samples, sample_rate)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticAudioCorpus {
    pub manifest: CorpusManifest,
    pub voices: Vec<VoiceModel>,
    pub config: AudioSynthConfig,
}

/// Builds the talkers of an audio corpus. Every talker warps a shared
/// inventory of states, so speakers differ by degree rather than kind.
pub fn synth_voices(config: &AudioSynthConfig) -> Result<Vec<VoiceModel>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let top = 0.45 * config.sample_rate as f64;
    let inventory: Vec<Vec<(f64, f64)>> = (0..config.num_states)
        .map(|_| {
            (0..config.partials_per_state)
                .map(|_| (rng.random_range(150.0..0.85 * top), rng.random_range(0.3..1.0)))
                .collect()
        })
        .collect();
    let voices = speaker_ids(config.num_speakers)
        .into_iter()
        .map(|speaker_id| {
            let warp = (config.speaker_variation * normal(&mut rng)).exp();
            let raw: Vec<f64> = (0..config.num_states).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let states = inventory
                .iter()
                .zip(&raw)
                .map(|(partials, w)| VoiceState {
                    weight: w / total,
                    partials: partials
                        .iter()
                        .map(|&(f, a)| {
                            let local = (0.5 * config.speaker_variation * normal(&mut rng)).exp();
                            let gain = rng.random_range(0.7..1.3);
                            (f * warp * local, a * gain)
                        })
                        .collect(),
                })
                .collect();
            VoiceModel { speaker_id, states }
        })
        .collect();
    Ok(voices)
}

/// In-memory audio corpus rendered from [`synth_voices`].
pub fn synth_audio_corpus(config: &AudioSynthConfig) -> Result<SyntheticAudioCorpus> {
    let voices = synth_voices(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_A0D1_0000_0001);
    let mut entries = Vec::new();
    for v in &voices {
        for u in 1..=config.utterances_per_speaker {
            let signal = v.render(
                &mut rng,
                config.duration_secs,
                config.sample_rate,
                config.jitter,
                config.noise_level,
            )?;
            entries.push(ManifestEntry::new(
                v.speaker_id.clone(),
                u as u32,
                UtteranceSource::Audio(Arc::new(signal)),
            ));
        }
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("synthetic".into(), "audio".into());
    metadata.insert("seed".into(), config.seed.to_string());
    Ok(SyntheticAudioCorpus {
        manifest: CorpusManifest::new(entries, metadata)?,
        voices,
        config: config.clone(),
    })
}

/// Writes every utterance as 16-bit WAV under `dir/<speaker>/` plus
/// `dir/manifest.tsv`, and returns the manifest path.
pub fn write_audio_corpus(corpus: &SyntheticAudioCorpus, dir: &Path) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(corpus.manifest.len());
    for e in corpus.manifest.entries() {
        let UtteranceSource::Audio(signal) = &e.source else {
            return Err(Error::InvalidInput("audio corpus holds non-audio entries".into()));
        };
        let spk_dir = dir.join(&e.speaker_id);
        std::fs::create_dir_all(&spk_dir).map_err(|err| Error::io(&spk_dir, err))?;
        let path = spk_dir.join(format!("u{:02}.wav", e.utterance_index));
        write_wav_i16(&path, signal)?;
        entries.push(ManifestEntry::new(e.speaker_id.clone(), e.utterance_index, UtteranceSource::File(path)));
    }
    let manifest = CorpusManifest::new(entries, corpus.manifest.metadata.clone())?;
    let manifest_path = dir.join("manifest.tsv");
    let text = manifest.to_text(Some(dir))?;
    std::fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames_of(e: &ManifestEntry) -> &FeatureMatrix {
        match &e.source {
            UtteranceSource::Features(f) => f,
            _ => panic!("expected features"),
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig { num_speakers: 3, utterances_per_speaker: 4, contamination_frac: 0.2, clean_utterances: 2, ..SynthConfig::default() };
        let a = synth_corpus(&cfg).unwrap();
        let b = synth_corpus(&cfg).unwrap();
        for (x, y) in a.manifest.entries().iter().zip(b.manifest.entries()) {
            assert_eq!(frames_of(x), frames_of(y));
        }
        let c = synth_corpus(&SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(frames_of(&a.manifest.entries()[0]), frames_of(&c.manifest.entries()[0]));
    }

    #[test]
    fn contamination_bounds() {
        let base = SynthConfig::default();
        assert!(synth_corpus(&SynthConfig { contamination_frac: 1.0, ..base.clone() }).is_err());
        assert!(synth_corpus(&SynthConfig { contamination_frac: 0.99, num_speakers: 2, ..base.clone() }).is_ok());
        assert!(synth_corpus(&SynthConfig { contamination_frac: -0.1, ..base }).is_err());
    }

    #[test]
    fn contamination_hits_only_test_utterances() {
        let cfg = SynthConfig {
            num_speakers: 2,
            utterances_per_speaker: 4,
            clean_utterances: 2,
            contamination_frac: 0.2,
            ..SynthConfig::default()
        };
        let corpus = synth_corpus(&cfg).unwrap();
        let far = corpus.outlier.means()[0][0] - 10.0;
        for e in corpus.manifest.entries() {
            let bad = frames_of(e).frames().filter(|x| x.iter().all(|v| *v > far)).count();
            let expect = if e.utterance_index > 2 { 20 } else { 0 };
            assert_eq!(bad, expect, "{} {}", e.speaker_id, e.utterance_index);
        }
    }

    #[test]
    fn rotated_speaker_density_matches_samples() {
        let cfg = SynthConfig { num_speakers: 1, rotate: true, ..SynthConfig::default() };
        let corpus = synth_corpus(&cfg).unwrap();
        let s = &corpus.speakers[0];
        let q = s.rotation.as_ref().unwrap();
        assert!(q.orthonormality_error() < 1e-12);
        // sample mean approaches the mixture mean in feature space
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = s.sample(&mut rng, 20000);
        let means = s.feature_means();
        for d in 0..cfg.dim {
            let expected: f64 = s.latent.weights().iter().zip(&means).map(|(w, m)| w * m[d]).sum();
            let got = xs.iter().map(|x| x[d]).sum::<f64>() / xs.len() as f64;
            assert!((got - expected).abs() < 0.05, "{got} {expected}");
        }
        assert!(s.log_density(&xs[0]).unwrap().is_finite());
    }

    #[test]
    fn audio_corpus_is_deterministic_and_bounded() {
        let cfg = AudioSynthConfig { num_speakers: 2, utterances_per_speaker: 2, duration_secs: 0.3, ..AudioSynthConfig::default() };
        let a = synth_audio_corpus(&cfg).unwrap();
        let b = synth_audio_corpus(&cfg).unwrap();
        for (x, y) in a.manifest.entries().iter().zip(b.manifest.entries()) {
            let (UtteranceSource::Audio(p), UtteranceSource::Audio(q)) = (&x.source, &y.source) else { panic!() };
            assert_eq!(p.samples(), q.samples());
            assert_eq!(p.len(), 2400);
            assert!(p.samples().iter().all(|s| s.abs() <= 0.8 + 1e-12));
        }
    }

    #[test]
    fn audio_corpus_writes_loadable_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = AudioSynthConfig { num_speakers: 2, utterances_per_speaker: 2, duration_secs: 0.2, ..AudioSynthConfig::default() };
        let corpus = synth_audio_corpus(&cfg).unwrap();
        let path = write_audio_corpus(&corpus, dir.path()).unwrap();
        let m = super::super::load_manifest(&path).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.metadata["synthetic"], "audio");
    }
}
