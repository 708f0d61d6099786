//! Speaker enrolment, per-utterance scoring and classifier fusion.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::divergence::{
    objective_type1, objective_type2, rescale, residuals_from_logs, trim, DivergenceSpec,
    EstimatorType,
};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureMatrix};
use crate::gmm::{em_fit, EmConfig, GmmModel};
use crate::math::median;
use crate::pct::{pct_apply, pct_compute, PctMatrix};

/// An enrolled speaker: GMM trained on PCT-rotated features.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModel {
    pub speaker_id: String,
    pub gmm: GmmModel,
    pub pct: PctMatrix,
    pub feature_fingerprint: u64,
}

impl SpeakerModel {
    pub fn dim(&self) -> usize {
        self.gmm.dim()
    }

    /// `log f_k(P_k x_i)` for every frame.
    pub fn log_densities(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_features(features)?;
        if self.pct.is_identity() {
            return self.gmm.log_densities(features);
        }
        self.gmm.log_densities(&pct_apply(&self.pct, features)?)
    }

    fn check_features(&self, features: &FeatureMatrix) -> Result<()> {
        if features.fingerprint() != self.feature_fingerprint {
            return Err(Error::FingerprintMismatch {
                model: self.feature_fingerprint,
                features: features.fingerprint(),
            });
        }
        if features.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: features.dim(),
            });
        }
        Ok(())
    }
}

/// One MFCC-GMM classifier: front end, model orders and scoring rule.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub features: FeatureConfig,
    pub em_speaker: EmConfig,
    pub em_test: EmConfig,
    pub divergence: DivergenceSpec,
    pub use_pct: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            em_speaker: EmConfig::speaker_default(),
            em_test: EmConfig::test_default(),
            divergence: DivergenceSpec::default(),
            use_pct: true,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.em_speaker.validate()?;
        self.em_test.validate()?;
        self.divergence.validate()
    }

    /// Short human-readable description of the parameters that usually vary.
    pub fn label(&self) -> String {
        let d = &self.divergence;
        let f = &self.features;
        format!(
            "{}/{} {} {} w={} band={}-{} trim={},{} beta={}",
            d.measure,
            d.estimator,
            if self.use_pct { "wpct" } else { "wopct" },
            feature_set_name(f),
            f.window_size,
            f.min_freq,
            f.max_freq,
            d.trim_low,
            d.trim_high,
            d.beta
        )
    }
}

fn feature_set_name(f: &FeatureConfig) -> String {
    if f.use_delta {
        format!("mfcc{}+d", f.num_ceps)
    } else {
        format!("mfcc{}", f.num_ceps)
    }
}

/// Enrols one speaker. With `use_pct` the GMM is trained on `P_k X_k`,
/// otherwise `P_k` is the identity.
pub fn train_speaker(
    speaker_id: &str,
    training: &FeatureMatrix,
    config: &ClassifierConfig,
) -> Result<SpeakerModel> {
    let pct = if config.use_pct {
        pct_compute(training)?
    } else {
        PctMatrix::identity(training.dim())
    };
    let gmm = if config.use_pct {
        em_fit(&pct_apply(&pct, training)?, &config.em_speaker)?
    } else {
        em_fit(training, &config.em_speaker)?
    };
    Ok(SpeakerModel {
        speaker_id: speaker_id.to_owned(),
        gmm,
        pct,
        feature_fingerprint: training.fingerprint(),
    })
}

/// Density estimate `g` of a test utterance, evaluated at its own frames.
///
/// With PCT, `g` is fitted on `P X` using the utterance's own PCT `P`, and
/// `log g(P x_i)` is stored for each frame `x_i`.
#[derive(Debug, Clone)]
pub struct TestDensity {
    pub gmm: GmmModel,
    pub pct: PctMatrix,
    log_g: Vec<f64>,
}

impl TestDensity {
    pub fn fit(features: &FeatureMatrix, em: &EmConfig, use_pct: bool) -> Result<Self> {
        let (pct, rotated) = if use_pct {
            let pct = pct_compute(features)?;
            let rotated = pct_apply(&pct, features)?;
            (pct, rotated)
        } else {
            (PctMatrix::identity(features.dim()), features.clone())
        };
        let gmm = em_fit(&rotated, em)?;
        let log_g = gmm.log_densities(&rotated)?;
        Ok(Self { gmm, pct, log_g })
    }

    pub fn log_densities(&self) -> &[f64] {
        &self.log_g
    }
}

/// Scores one speaker against a test utterance; larger is a better match.
///
/// `test` must be provided whenever `spec.needs_test_density()`.
pub fn score_speaker(
    model: &SpeakerModel,
    features: &FeatureMatrix,
    test: Option<&TestDensity>,
    spec: &DivergenceSpec,
) -> Result<f64> {
    let log_f = model.log_densities(features)?;
    if !spec.needs_test_density() {
        return Ok(log_f.iter().sum());
    }
    let test = test.ok_or_else(|| {
        Error::InvalidInput(format!(
            "{}/{} scoring needs a test-utterance density",
            spec.measure, spec.estimator
        ))
    })?;
    let mut residuals = residuals_from_logs(test.log_densities(), &log_f)?;
    if spec.rescales() {
        residuals = rescale(&residuals, spec.beta);
    }
    if spec.trims() {
        residuals = trim(&residuals, spec.trim_low, spec.trim_high)?;
    }
    match spec.estimator {
        EstimatorType::TypeI => objective_type1(spec, &residuals, &log_f),
        EstimatorType::TypeII => objective_type2(spec, &residuals),
    }
}

/// Outcome of a closed-set identification.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub predicted: String,
    pub scores: BTreeMap<String, f64>,
}

impl Decision {
    /// Picks the highest score; ties go to the lexicographically smallest id.
    pub fn from_scores(scores: BTreeMap<String, f64>) -> Result<Self> {
        if let Some((id, _)) = scores.iter().find(|(_, s)| s.is_nan()) {
            return Err(Error::Numeric(format!("score for speaker '{id}' is NaN")));
        }
        let mut best: Option<(&String, f64)> = None;
        for (id, &s) in &scores {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((id, s));
            }
        }
        let predicted = best
            .map(|(id, _)| id.clone())
            .ok_or_else(|| Error::InvalidInput("no speakers to choose from".into()))?;
        Ok(Self { predicted, scores })
    }

    /// Speakers by descending score, ties in id order.
    pub fn ranking(&self) -> Vec<(&str, f64)> {
        let mut ranked: Vec<(&str, f64)> =
            self.scores.iter().map(|(id, s)| (id.as_str(), *s)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked
    }
}

fn check_models(models: &[SpeakerModel], features: &FeatureMatrix) -> Result<()> {
    if models.is_empty() {
        return Err(Error::InvalidInput("no speaker models to identify against".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for m in models {
        if !seen.insert(m.speaker_id.as_str()) {
            return Err(Error::InvalidInput(format!(
                "speaker '{}' is enrolled twice",
                m.speaker_id
            )));
        }
        m.check_features(features)?;
    }
    Ok(())
}

/// Scores every enrolled speaker, fitting the test density at most once.
pub fn score_all(
    models: &[SpeakerModel],
    features: &FeatureMatrix,
    config: &ClassifierConfig,
) -> Result<BTreeMap<String, f64>> {
    config.divergence.validate()?;
    check_models(models, features)?;
    let test = if config.divergence.needs_test_density() {
        Some(TestDensity::fit(features, &config.em_test, config.use_pct)?)
    } else {
        None
    };
    score_with_density(models, features, test.as_ref(), &config.divergence)
}

/// Scores every enrolled speaker against an already fitted test density.
/// Results are collected in model order, so they never depend on scheduling.
pub fn score_with_density(
    models: &[SpeakerModel],
    features: &FeatureMatrix,
    test: Option<&TestDensity>,
    spec: &DivergenceSpec,
) -> Result<BTreeMap<String, f64>> {
    check_models(models, features)?;
    let scores: Vec<f64> = models
        .par_iter()
        .map(|m| score_speaker(m, features, test, spec))
        .collect::<Result<_>>()?;
    Ok(models
        .iter()
        .map(|m| m.speaker_id.clone())
        .zip(scores)
        .collect())
}

/// Identifies the speaker of a test utterance.
pub fn identify(
    models: &[SpeakerModel],
    features: &FeatureMatrix,
    config: &ClassifierConfig,
) -> Result<Decision> {
    Decision::from_scores(score_all(models, features, config)?)
}

/// How per-classifier score maps are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fusion {
    /// Shift each map to zero median and scale to unit median absolute deviation.
    #[default]
    Standardized,
    /// Add raw scores.
    Sum,
}

impl FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "standardized" | "mad" => Ok(Fusion::Standardized),
            "sum" | "raw" => Ok(Fusion::Sum),
            other => Err(Error::InvalidConfig(format!(
                "unknown fusion '{other}' (expected standardized or sum)"
            ))),
        }
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Standardized => "standardized",
            Fusion::Sum => "sum",
        })
    }
}

// Standardized scores are clamped so an infinite raw score cannot produce NaN.
const Z_LIMIT: f64 = 1e12;

fn standardize(scores: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let finite: Vec<f64> = scores.values().copied().filter(|s| s.is_finite()).collect();
    if finite.is_empty() {
        return scores.keys().map(|k| (k.clone(), 0.0)).collect();
    }
    let center = median(&finite);
    let deviations: Vec<f64> = finite.iter().map(|s| (s - center).abs()).collect();
    let mad = median(&deviations);
    let scale = if mad > 0.0 { mad } else { 1.0 };
    scores
        .iter()
        .map(|(k, s)| (k.clone(), ((s - center) / scale).clamp(-Z_LIMIT, Z_LIMIT)))
        .collect()
}

/// Fuses several classifiers' score maps over the same speakers.
pub fn combine(score_maps: &[BTreeMap<String, f64>], fusion: Fusion) -> Result<Decision> {
    let first = score_maps
        .first()
        .ok_or_else(|| Error::InvalidInput("no score maps to combine".into()))?;
    for (i, m) in score_maps.iter().enumerate().skip(1) {
        if !m.keys().eq(first.keys()) {
            return Err(Error::InvalidInput(format!(
                "score map {i} covers a different set of speakers"
            )));
        }
    }
    let mut total: BTreeMap<String, f64> = first.keys().map(|k| (k.clone(), 0.0)).collect();
    for m in score_maps {
        let part = match fusion {
            Fusion::Standardized => standardize(m),
            Fusion::Sum => m.clone(),
        };
        for (k, v) in part {
            *total.get_mut(&k).expect("keys checked") += v;
        }
    }
    Decision::from_scores(total)
}
