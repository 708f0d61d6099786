//! Corpus manifests, train/test splitting, evaluation and sweeps.
//!
//! A manifest is line-oriented text:
//!
//! ```text
//! # comment
//! #@corpus=ntimit
//! spk01<TAB>1<TAB>spk01/sa1.wav
//! ```
//!
//! Lines starting with `#@` carry `key=value` metadata. Relative audio paths
//! are resolved against the manifest's directory.

mod eval;
pub mod synth;

pub use eval::{
    evaluate, score_corpus, sweep, ClassifierResult, CombinedResult, Confusion, EvalOptions,
    EvaluationReport, Prediction, ScoredCorpus, SweepGrid, SweepReport, ENSEMBLE_KEYS,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::features::{build_features, load_wav, AudioSignal, FeatureConfig, FeatureMatrix};

/// Where an utterance's data comes from.
#[derive(Debug, Clone)]
pub enum UtteranceSource {
    File(PathBuf),
    Audio(Arc<AudioSignal>),
    /// Precomputed features. They bypass the front end entirely and are
    /// stamped with whatever feature configuration is in use.
    Features(Arc<FeatureMatrix>),
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub speaker_id: String,
    pub utterance_index: u32,
    pub source: UtteranceSource,
}

impl ManifestEntry {
    pub fn new(speaker_id: impl Into<String>, utterance_index: u32, source: UtteranceSource) -> Self {
        Self {
            speaker_id: speaker_id.into(),
            utterance_index,
            source,
        }
    }

    /// Extracts features, tagging any failure with the utterance key.
    pub fn features(&self, config: &FeatureConfig) -> Result<FeatureMatrix> {
        self.features_inner(config).map_err(|e| Error::Utterance {
            speaker_id: self.speaker_id.clone(),
            utterance_index: self.utterance_index,
            source: Box::new(e),
        })
    }

    fn features_inner(&self, config: &FeatureConfig) -> Result<FeatureMatrix> {
        match &self.source {
            UtteranceSource::File(path) => build_features(&load_wav(path)?, config),
            UtteranceSource::Audio(signal) => build_features(signal, config),
            UtteranceSource::Features(f) => Ok(f.as_ref().clone().with_fingerprint(config.fingerprint())),
        }
    }

    /// Audio duration in seconds, when the source is audio.
    pub fn duration_secs(&self) -> Result<Option<f64>> {
        match &self.source {
            UtteranceSource::File(path) => Ok(Some(load_wav(path)?.duration_secs())),
            UtteranceSource::Audio(signal) => Ok(Some(signal.duration_secs())),
            UtteranceSource::Features(_) => Ok(None),
        }
    }
}

/// Validated set of utterances, ordered by speaker id then utterance index.
#[derive(Debug, Clone)]
pub struct CorpusManifest {
    entries: Vec<ManifestEntry>,
    pub metadata: BTreeMap<String, String>,
}

impl CorpusManifest {
    pub fn new(mut entries: Vec<ManifestEntry>, metadata: BTreeMap<String, String>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Manifest("no entries".into()));
        }
        for e in &entries {
            if e.speaker_id.is_empty() || e.speaker_id.contains(['\t', '\n', '\r']) {
                return Err(Error::Manifest(format!(
                    "invalid speaker id {:?}",
                    e.speaker_id
                )));
            }
        }
        entries.sort_by(|a, b| {
            a.speaker_id
                .cmp(&b.speaker_id)
                .then(a.utterance_index.cmp(&b.utterance_index))
        });
        for pair in entries.windows(2) {
            if pair[0].speaker_id == pair[1].speaker_id
                && pair[0].utterance_index == pair[1].utterance_index
            {
                return Err(Error::Manifest(format!(
                    "duplicate entry ({}, {})",
                    pair[0].speaker_id, pair[0].utterance_index
                )));
            }
        }
        let manifest = Self { entries, metadata };
        for spk in manifest.speakers() {
            let n = manifest.utterances_of(spk).len();
            if n < 2 {
                return Err(Error::Manifest(format!(
                    "speaker '{spk}' has {n} utterance; at least 2 are needed"
                )));
            }
        }
        Ok(manifest)
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct speaker ids in lexicographic order.
    pub fn speakers(&self) -> Vec<&str> {
        let set: BTreeSet<&str> = self.entries.iter().map(|e| e.speaker_id.as_str()).collect();
        set.into_iter().collect()
    }

    /// A speaker's utterances in index order.
    pub fn utterances_of(&self, speaker_id: &str) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.speaker_id == speaker_id)
            .collect()
    }

    /// Fails with every missing audio path listed.
    pub fn check_files(&self) -> Result<()> {
        let missing: Vec<String> = self
            .entries
            .iter()
            .filter_map(|e| match &e.source {
                UtteranceSource::File(p) if !p.is_file() => Some(p.display().to_string()),
                _ => None,
            })
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Manifest(format!(
                "{} audio file(s) missing: {}",
                missing.len(),
                missing.join(", ")
            )))
        }
    }

    /// Manifest text. Paths under `base` are written relative to it.
    /// In-memory sources cannot be written.
    pub fn to_text(&self, base: Option<&Path>) -> Result<String> {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "#@{k}={v}");
        }
        for e in &self.entries {
            let UtteranceSource::File(path) = &e.source else {
                return Err(Error::Manifest(format!(
                    "entry ({}, {}) has no file to reference",
                    e.speaker_id, e.utterance_index
                )));
            };
            let shown = base
                .and_then(|b| path.strip_prefix(b).ok())
                .unwrap_or(path);
            let _ = writeln!(out, "{}\t{}\t{}", e.speaker_id, e.utterance_index, shown.display());
        }
        Ok(out)
    }
}

/// Parses manifest text without touching the file system.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<CorpusManifest> {
    let mut entries = Vec::new();
    let mut metadata = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches(['\r', ' ']);
        if let Some(meta) = line.strip_prefix("#@") {
            let (k, v) = meta.split_once('=').ok_or_else(|| {
                Error::Manifest(format!("line {line_no}: metadata needs '#@key=value'"))
            })?;
            metadata.insert(k.trim().to_owned(), v.trim().to_owned());
            continue;
        }
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Manifest(format!(
                "line {line_no}: expected speaker<TAB>index<TAB>path, found {} field(s)",
                fields.len()
            )));
        }
        let index: u32 = fields[1].trim().parse().map_err(|_| {
            Error::Manifest(format!(
                "line {line_no}: utterance index '{}' is not a nonnegative integer",
                fields[1]
            ))
        })?;
        let path = Path::new(fields[2].trim());
        let path = if path.is_absolute() {
            path.to_path_buf()
        } else {
            base_dir.join(path)
        };
        entries.push(ManifestEntry::new(fields[0].trim(), index, UtteranceSource::File(path)));
    }
    CorpusManifest::new(entries, metadata)
}

/// Reads, validates and checks that every referenced audio file exists.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let manifest = parse_manifest(&text, base)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    manifest.check_files()?;
    Ok(manifest)
}

/// Per-speaker utterance counts for training and testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_count: usize,
    pub test_count: usize,
}

impl SplitSpec {
    pub fn new(train_count: usize, test_count: usize) -> Self {
        Self {
            train_count,
            test_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_count == 0 || self.test_count == 0 {
            return Err(Error::InvalidConfig(format!(
                "split needs at least one training and one test utterance, got {}:{}",
                self.train_count, self.test_count
            )));
        }
        Ok(())
    }
}

/// Training utterances grouped by speaker, and the flat test list.
#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<(String, Vec<ManifestEntry>)>,
    pub test: Vec<ManifestEntry>,
}

/// First `train_count` utterances per speaker (by index) train, the next
/// `test_count` test. Remaining utterances are unused.
pub fn split(manifest: &CorpusManifest, spec: SplitSpec) -> Result<CorpusSplit> {
    spec.validate()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for spk in manifest.speakers() {
        let utts = manifest.utterances_of(spk);
        let needed = spec.train_count + spec.test_count;
        if utts.len() < needed {
            return Err(Error::Manifest(format!(
                "speaker '{spk}' has {} utterances but the {}:{} split needs {needed}",
                utts.len(),
                spec.train_count,
                spec.test_count
            )));
        }
        train.push((
            spk.to_owned(),
            utts[..spec.train_count].iter().map(|e| (*e).clone()).collect(),
        ));
        test.extend(utts[spec.train_count..needed].iter().map(|e| (*e).clone()));
    }
    Ok(CorpusSplit { train, test })
}
