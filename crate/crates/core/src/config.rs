//! Flat `key = value` toolkit configuration.
//!
//! Layers are applied in order defaults, file, command line; each later
//! layer overrides individual keys of the earlier ones. Within one layer the
//! `feature_set` preset is applied first so explicit feature keys refine it.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::SplitSpec;
use crate::divergence::{EstimatorType, Measure};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, WindowFunction};
use crate::gmm::EmConfig;
use crate::identify::{ClassifierConfig, Fusion};

/// Every recognised key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("feature_set", "preset applied before other feature keys: fs1 (20 MFCC + 20 delta) or fs2 (39 MFCC)"),
    ("window_size", "analysis window length in seconds"),
    ("window_shift", "hop between windows in seconds"),
    ("num_filters", "number of triangular mel filters"),
    ("num_ceps", "cepstral coefficients kept, c_1..c_n (below num_filters)"),
    ("min_freq", "lowest filterbank frequency in Hz"),
    ("max_freq", "highest filterbank frequency in Hz (at most half the sample rate)"),
    ("use_delta", "stack first-difference delta coefficients below the MFCCs"),
    ("pre_emphasis", "pre-emphasis coefficient in [0, 1); 0 disables"),
    ("window_function", "analysis window; only hamming"),
    ("speaker_components", "mixture components per speaker model"),
    ("speaker_max_iters", "EM iteration cap for speaker models"),
    ("speaker_tol", "relative log-likelihood gain that stops speaker EM"),
    ("speaker_variance_floor", "speaker variance floor as a fraction of global variance"),
    ("speaker_restarts", "EM restarts per speaker model, best kept"),
    ("speaker_seed", "seed for speaker EM initialisation"),
    ("test_components", "mixture components of the per-utterance test density"),
    ("test_max_iters", "EM iteration cap for test densities"),
    ("test_tol", "relative log-likelihood gain that stops test EM"),
    ("test_variance_floor", "test variance floor as a fraction of global variance"),
    ("test_restarts", "EM restarts per test density"),
    ("test_seed", "seed for test-density EM initialisation"),
    ("seed", "sets speaker_seed and test_seed together"),
    ("measure", "disparity: ld, hd or pcs"),
    ("estimator", "objective type: 1 or 2"),
    ("trim_low", "fraction of smallest residuals discarded"),
    ("trim_high", "fraction of largest residuals discarded"),
    ("beta", "residual rescaling exponent, positive"),
    ("use_pct", "rotate features by each speaker's principal components"),
    ("train_count", "training utterances per speaker, taken first by index"),
    ("test_count", "test utterances per speaker, following the training ones"),
    ("fusion", "score fusion across classifiers: standardized or sum"),
    ("combine", "report the fused ensemble decision"),
];

/// Everything a training or evaluation run is parameterised by.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolkitConfig {
    pub classifier: ClassifierConfig,
    pub split: SplitSpec,
    pub fusion: Fusion,
    pub combine: bool,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig::default(),
            split: SplitSpec::new(6, 4),
            fusion: Fusion::Standardized,
            combine: false,
        }
    }
}

impl ToolkitConfig {
    /// Defaults overridden by the file at `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::default();
        config
            .apply_text(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    /// Applies one configuration layer given as file text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let pairs = parse_key_values(text)?;
        self.apply_pairs(pairs.iter().map(|(_, k, v)| (k.as_str(), v.as_str())))
    }

    /// Applies one layer of overrides, preset first.
    pub fn apply_pairs<'a, I>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let pairs: Vec<(&str, &str)> = pairs.into_iter().collect();
        for (k, v) in pairs.iter().filter(|(k, _)| *k == "feature_set") {
            self.set(k, v)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| *k != "feature_set") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if set_classifier_key(&mut self.classifier, key, value)? {
            return Ok(());
        }
        match key {
            "train_count" => self.split.train_count = parse_value(key, value)?,
            "test_count" => self.split.test_count = parse_value(key, value)?,
            "fusion" => self.fusion = value.parse()?,
            "combine" => self.combine = parse_bool(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.classifier.validate()?;
        self.split.validate()
    }

    /// Canonical key/value listing, suitable for writing back to a file.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut pairs = classifier_pairs(&self.classifier);
        pairs.push(("train_count", self.split.train_count.to_string()));
        pairs.push(("test_count", self.split.test_count.to_string()));
        pairs.push(("fusion", self.fusion.to_string()));
        pairs.push(("combine", self.combine.to_string()));
        pairs
    }

    pub fn to_text(&self) -> String {
        render_pairs(&self.to_pairs())
    }
}

/// Renders pairs as config-file lines.
pub fn render_pairs(pairs: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

/// Full parameter record of one classifier. Floats use shortest round-trip
/// formatting, so parsing the values back reproduces the config exactly.
pub fn classifier_pairs(c: &ClassifierConfig) -> Vec<(&'static str, String)> {
    let f = &c.features;
    let d = &c.divergence;
    vec![
        ("window_size", f.window_size.to_string()),
        ("window_shift", f.window_shift.to_string()),
        ("num_filters", f.num_filters.to_string()),
        ("num_ceps", f.num_ceps.to_string()),
        ("min_freq", f.min_freq.to_string()),
        ("max_freq", f.max_freq.to_string()),
        ("use_delta", f.use_delta.to_string()),
        ("pre_emphasis", f.pre_emphasis.to_string()),
        ("window_function", f.window_function.name().to_string()),
        ("speaker_components", c.em_speaker.num_components.to_string()),
        ("speaker_max_iters", c.em_speaker.max_iters.to_string()),
        ("speaker_tol", c.em_speaker.rel_tol.to_string()),
        ("speaker_variance_floor", c.em_speaker.variance_floor.to_string()),
        ("speaker_restarts", c.em_speaker.num_restarts.to_string()),
        ("speaker_seed", c.em_speaker.seed.to_string()),
        ("test_components", c.em_test.num_components.to_string()),
        ("test_max_iters", c.em_test.max_iters.to_string()),
        ("test_tol", c.em_test.rel_tol.to_string()),
        ("test_variance_floor", c.em_test.variance_floor.to_string()),
        ("test_restarts", c.em_test.num_restarts.to_string()),
        ("test_seed", c.em_test.seed.to_string()),
        ("measure", d.measure.to_string()),
        ("estimator", d.estimator.to_string()),
        ("trim_low", d.trim_low.to_string()),
        ("trim_high", d.trim_high.to_string()),
        ("beta", d.beta.to_string()),
        ("use_pct", c.use_pct.to_string()),
    ]
}

/// Sets a classifier key. Returns `Ok(false)` for keys that are not
/// classifier parameters.
pub fn set_classifier_key(c: &mut ClassifierConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "feature_set" => c.features = parse_feature_set(value)?,
        "window_size" => c.features.window_size = parse_value(key, value)?,
        "window_shift" => c.features.window_shift = parse_value(key, value)?,
        "num_filters" => c.features.num_filters = parse_value(key, value)?,
        "num_ceps" => c.features.num_ceps = parse_value(key, value)?,
        "min_freq" => c.features.min_freq = parse_value(key, value)?,
        "max_freq" => c.features.max_freq = parse_value(key, value)?,
        "use_delta" => c.features.use_delta = parse_bool(key, value)?,
        "pre_emphasis" => c.features.pre_emphasis = parse_value(key, value)?,
        "window_function" => {
            c.features.window_function = WindowFunction::from_name(value.trim())
                .ok_or_else(|| bad_value(key, value, "expected hamming"))?
        }
        "seed" => {
            let seed = parse_value(key, value)?;
            c.em_speaker.seed = seed;
            c.em_test.seed = seed;
        }
        "measure" => c.divergence.measure = Measure::from_str(value)?,
        "estimator" => c.divergence.estimator = EstimatorType::from_str(value)?,
        "trim_low" => c.divergence.trim_low = parse_value(key, value)?,
        "trim_high" => c.divergence.trim_high = parse_value(key, value)?,
        "beta" => c.divergence.beta = parse_value(key, value)?,
        "use_pct" => c.use_pct = parse_bool(key, value)?,
        _ => {
            if let Some(field) = key.strip_prefix("speaker_") {
                return set_em_key(&mut c.em_speaker, key, field, value);
            }
            if let Some(field) = key.strip_prefix("test_") {
                return set_em_key(&mut c.em_test, key, field, value);
            }
            return Ok(false);
        }
    }
    Ok(true)
}

fn set_em_key(em: &mut EmConfig, key: &str, field: &str, value: &str) -> Result<bool> {
    match field {
        "components" => em.num_components = parse_value(key, value)?,
        "max_iters" => em.max_iters = parse_value(key, value)?,
        "tol" => em.rel_tol = parse_value(key, value)?,
        "variance_floor" => em.variance_floor = parse_value(key, value)?,
        "restarts" => em.num_restarts = parse_value(key, value)?,
        "seed" => em.seed = parse_value(key, value)?,
        // test_count is a split key, handled by the caller
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn parse_feature_set(value: &str) -> Result<FeatureConfig> {
    match value.trim().to_ascii_lowercase().as_str() {
        "fs1" | "fs-i" | "1" => Ok(FeatureConfig::fs_one()),
        "fs2" | "fs-ii" | "2" => Ok(FeatureConfig::fs_two()),
        other => Err(Error::InvalidConfig(format!(
            "unknown feature set '{other}' (expected fs1 or fs2)"
        ))),
    }
}

/// Splits config text into `(line number, key, value)` triples.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {line_no}: expected 'key = value', got '{line}'"))
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::InvalidConfig(format!("line {line_no}: empty key or value")));
        }
        if !is_known_key(k) {
            return Err(Error::InvalidConfig(format!("line {line_no}: unknown key '{k}'")));
        }
        if let Some((prev, _, _)) = out.iter().find(|(_, pk, _)| pk == k) {
            return Err(Error::InvalidConfig(format!(
                "line {line_no}: key '{k}' already set on line {prev}"
            )));
        }
        out.push((line_no, k.to_owned(), v.to_owned()));
    }
    Ok(out)
}

pub fn is_known_key(key: &str) -> bool {
    CONFIG_KEYS.iter().any(|(k, _)| *k == key)
}

fn unknown_key(key: &str) -> Error {
    Error::InvalidConfig(format!("unknown configuration key '{key}'"))
}

fn bad_value(key: &str, value: &str, why: &str) -> Error {
    Error::InvalidConfig(format!("bad value '{value}' for {key}: {why}"))
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| bad_value(key, value, &e.to_string()))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad_value(key, value, "expected true or false")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut c = ToolkitConfig::default();
        c.classifier.features.window_size = 0.03;
        c.classifier.divergence.beta = 0.1 + 0.2;
        c.classifier.em_test.seed = 99;
        c.combine = true;
        let mut back = ToolkitConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_key_is_documented_and_emitted() {
        let c = ToolkitConfig::default();
        for (k, _) in c.to_pairs() {
            assert!(is_known_key(k), "{k}");
        }
        for (k, _) in CONFIG_KEYS {
            let emitted = c.to_pairs().iter().any(|(e, _)| e == k);
            assert!(emitted || *k == "feature_set" || *k == "seed", "{k}");
        }
    }

    #[test]
    fn preset_applies_before_explicit_keys() {
        let mut c = ToolkitConfig::default();
        c.apply_text("num_filters = 50\nfeature_set = fs2\n").unwrap();
        assert_eq!(c.classifier.features.num_filters, 50);
        assert_eq!(c.classifier.features.num_ceps, 39);
        assert!(!c.classifier.features.use_delta);
    }

    #[test]
    fn later_layers_override() {
        let mut c = ToolkitConfig::default();
        c.apply_text("measure = hd\nbeta = 0.5 # comment\n").unwrap();
        c.apply_pairs([("beta", "0.3")]).unwrap();
        assert_eq!(c.classifier.divergence.measure, Measure::Hd);
        assert_eq!(c.classifier.divergence.beta, 0.3);
        assert_eq!(c.classifier.divergence.trim_high, 0.10);
    }

    #[test]
    fn seed_sets_both_em_configs() {
        let mut c = ToolkitConfig::default();
        c.apply_text("seed = 7\ntest_count = 2").unwrap();
        assert_eq!(c.classifier.em_speaker.seed, 7);
        assert_eq!(c.classifier.em_test.seed, 7);
        assert_eq!(c.split.test_count, 2);
    }

    #[test]
    fn rejects_bad_lines() {
        let mut c = ToolkitConfig::default();
        assert!(c.apply_text("nonsense").is_err());
        assert!(c.apply_text("colour = blue").is_err());
        assert!(c.apply_text("beta = x").is_err());
        assert!(c.apply_text("beta = 1\nbeta = 2").is_err());
        assert!(c.apply_text("use_pct = maybe").is_err());
        let err = c.apply_text("\n\nmeasure = kl").unwrap_err();
        assert!(err.to_string().contains("kl"));
    }
}
