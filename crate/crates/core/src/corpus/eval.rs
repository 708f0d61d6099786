use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;

use super::{split, CorpusManifest, CorpusSplit, ManifestEntry, SplitSpec};
use crate::config::{classifier_pairs, set_classifier_key};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureMatrix};
use crate::identify::{
    combine, score_with_density, train_speaker, ClassifierConfig, Decision, Fusion, SpeakerModel,
    TestDensity,
};

/// Parameters varied across the members of a fused ensemble.
pub const ENSEMBLE_KEYS: &[&str] = &["window_size", "window_shift", "min_freq", "max_freq"];

/// `(true speaker, predicted speaker) → count`.
pub type Confusion = BTreeMap<(String, String), usize>;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalOptions {
    pub combine: bool,
    pub fusion: Fusion,
}

/// Per-utterance score maps for every classifier, in test-list order.
#[derive(Debug, Clone)]
pub struct ScoredCorpus {
    pub configs: Vec<ClassifierConfig>,
    /// `(speaker id, utterance index)` of each test utterance.
    pub test: Vec<(String, u32)>,
    /// `scores[c][u]`: classifier `c` on test utterance `u`.
    pub scores: Vec<Vec<BTreeMap<String, f64>>>,
    pub num_speakers: usize,
    pub split: SplitSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub speaker_id: String,
    pub utterance_index: u32,
    pub predicted: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierResult {
    pub label: String,
    pub config: ClassifierConfig,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub confusion: Confusion,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedResult {
    pub label: String,
    pub fusion: Fusion,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub confusion: Confusion,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub classifiers: Vec<ClassifierResult>,
    pub combined: Option<CombinedResult>,
    pub split: SplitSpec,
    pub num_speakers: usize,
}

fn tally(test: &[(String, u32)], decisions: &[String]) -> (usize, f64, Confusion, Vec<Prediction>) {
    let mut confusion = Confusion::new();
    let mut correct = 0;
    let mut predictions = Vec::with_capacity(test.len());
    for ((spk, idx), predicted) in test.iter().zip(decisions) {
        if spk == predicted {
            correct += 1;
        }
        *confusion.entry((spk.clone(), predicted.clone())).or_default() += 1;
        predictions.push(Prediction {
            speaker_id: spk.clone(),
            utterance_index: *idx,
            predicted: predicted.clone(),
        });
    }
    let accuracy = 100.0 * correct as f64 / test.len() as f64;
    (correct, accuracy, confusion, predictions)
}

impl ScoredCorpus {
    fn classifier_result(&self, c: usize) -> Result<ClassifierResult> {
        let decisions = self.scores[c]
            .iter()
            .map(|m| Decision::from_scores(m.clone()).map(|d| d.predicted))
            .collect::<Result<Vec<_>>>()?;
        let (correct, accuracy, confusion, predictions) = tally(&self.test, &decisions);
        Ok(ClassifierResult {
            label: self.configs[c].label(),
            config: self.configs[c].clone(),
            correct,
            total: self.test.len(),
            accuracy,
            confusion,
            predictions,
        })
    }

    fn combined_result(&self, members: &[usize], fusion: Fusion, label: String) -> Result<CombinedResult> {
        let decisions = (0..self.test.len())
            .map(|u| {
                let maps: Vec<BTreeMap<String, f64>> =
                    members.iter().map(|&c| self.scores[c][u].clone()).collect();
                combine(&maps, fusion).map(|d| d.predicted)
            })
            .collect::<Result<Vec<_>>>()?;
        let (correct, accuracy, confusion, predictions) = tally(&self.test, &decisions);
        Ok(CombinedResult {
            label,
            fusion,
            correct,
            total: self.test.len(),
            accuracy,
            confusion,
            predictions,
        })
    }

    /// Report over a subset of classifiers, optionally with their fusion.
    pub fn report(&self, members: &[usize], combined: Option<Fusion>) -> Result<EvaluationReport> {
        let classifiers = members
            .iter()
            .map(|&c| self.classifier_result(c))
            .collect::<Result<Vec<_>>>()?;
        let combined = match combined {
            Some(fusion) => Some(self.combined_result(members, fusion, ensemble_label(&self.configs[members[0]]))?),
            None => None,
        };
        Ok(EvaluationReport {
            classifiers,
            combined,
            split: self.split,
            num_speakers: self.num_speakers,
        })
    }
}

/// Label shared by all members of an ensemble: the classifier label minus
/// the varied front-end parameters.
fn ensemble_label(c: &ClassifierConfig) -> String {
    let d = &c.divergence;
    format!(
        "{}/{} {} {} trim={},{} beta={}",
        d.measure,
        d.estimator,
        if c.use_pct { "wpct" } else { "wopct" },
        if c.features.use_delta {
            format!("mfcc{}+d", c.features.num_ceps)
        } else {
            format!("mfcc{}", c.features.num_ceps)
        },
        d.trim_low,
        d.trim_high,
        d.beta
    )
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn params_string(c: &ClassifierConfig) -> String {
    classifier_pairs(c)
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

const CSV_HEADER: &str = "label,params,accuracy\n";

impl EvaluationReport {
    /// `(label, accuracy)` per classifier, in configuration order.
    pub fn per_classifier_accuracy(&self) -> Vec<(String, f64)> {
        self.classifiers
            .iter()
            .map(|c| (c.label.clone(), c.accuracy))
            .collect()
    }

    pub fn combined_accuracy(&self) -> Option<f64> {
        self.combined.as_ref().map(|c| c.accuracy)
    }

    /// Confusion counts of the fused decision, or of the first classifier.
    pub fn confusion(&self) -> &Confusion {
        match &self.combined {
            Some(c) => &c.confusion,
            None => &self.classifiers[0].confusion,
        }
    }

    /// Full parameter record, one `[classifier N]` block per classifier.
    pub fn config_dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "train_count = {}", self.split.train_count);
        let _ = writeln!(out, "test_count = {}", self.split.test_count);
        if let Some(c) = &self.combined {
            let _ = writeln!(out, "fusion = {}", c.fusion);
        }
        for (i, c) in self.classifiers.iter().enumerate() {
            let _ = writeln!(out, "[classifier {}]", i + 1);
            for (k, v) in classifier_pairs(&c.config) {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    fn csv_rows(&self, out: &mut String) {
        for c in &self.classifiers {
            let _ = writeln!(
                out,
                "{},{},{}",
                csv_field(&c.label),
                csv_field(&params_string(&c.config)),
                c.accuracy
            );
        }
        if let Some(c) = &self.combined {
            let _ = writeln!(
                out,
                "{},{},{}",
                csv_field(&format!("combined {}", c.label)),
                csv_field(&format!("fusion={};members={}", c.fusion, self.classifiers.len())),
                c.accuracy
            );
        }
    }

    /// One row per classifier plus a `combined` row when fused.
    pub fn to_csv(&self) -> String {
        let mut out = CSV_HEADER.to_owned();
        self.csv_rows(&mut out);
        out
    }

    pub fn summary_table(&self) -> String {
        let width = self
            .classifiers
            .iter()
            .map(|c| c.label.len())
            .max()
            .unwrap_or(0)
            .max("Combined".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} speakers, {}:{} split, {} test utterances",
            self.num_speakers,
            self.split.train_count,
            self.split.test_count,
            self.classifiers.first().map_or(0, |c| c.total)
        );
        let _ = writeln!(out, "{:<width$}  {:>8}", "Classifier", "Accuracy");
        for c in &self.classifiers {
            let _ = writeln!(out, "{:<width$}  {:>8.3}", c.label, c.accuracy);
        }
        if let Some(c) = &self.combined {
            let _ = writeln!(out, "{:<width$}  {:>8.3}", "Combined", c.accuracy);
        }
        out
    }
}

fn cache_key(fingerprint: u64, em: &crate::gmm::EmConfig, use_pct: bool) -> String {
    format!("{fingerprint:016x}|{em:?}|{use_pct}")
}

fn extract_all(entries: &[&ManifestEntry], config: &FeatureConfig) -> Result<Vec<FeatureMatrix>> {
    entries.par_iter().map(|e| e.features(config)).collect()
}

struct FrontEnd {
    train: Vec<FeatureMatrix>,
    test: Vec<FeatureMatrix>,
}

/// Trains, fits and scores every classifier on the split. Features,
/// speaker models and test densities are shared between classifiers whose
/// relevant parameters agree, so a sweep over scoring parameters trains once.
pub fn score_corpus(
    manifest: &CorpusManifest,
    split_spec: SplitSpec,
    configs: &[ClassifierConfig],
) -> Result<ScoredCorpus> {
    if configs.is_empty() {
        return Err(Error::InvalidConfig("no classifier configurations given".into()));
    }
    for c in configs {
        c.validate()?;
    }
    let CorpusSplit { train, test } = split(manifest, split_spec)?;
    let test_refs: Vec<&ManifestEntry> = test.iter().collect();

    let mut front_ends: HashMap<u64, FrontEnd> = HashMap::new();
    let mut models: HashMap<String, Vec<SpeakerModel>> = HashMap::new();
    let mut densities: HashMap<String, Vec<Option<TestDensity>>> = HashMap::new();
    let mut scores = Vec::with_capacity(configs.len());

    for config in configs {
        let fp = config.features.fingerprint();
        if let std::collections::hash_map::Entry::Vacant(slot) = front_ends.entry(fp) {
            log::info!("extracting features for {}", config.label());
            let train_feats = train
                .par_iter()
                .map(|(_, utts)| {
                    let refs: Vec<&ManifestEntry> = utts.iter().collect();
                    let parts = extract_all(&refs, &config.features)?;
                    FeatureMatrix::concat_all(&parts)
                })
                .collect::<Result<Vec<_>>>()?;
            let test_feats = extract_all(&test_refs, &config.features)?;
            slot.insert(FrontEnd { train: train_feats, test: test_feats });
        }
        let fe = &front_ends[&fp];

        let model_key = cache_key(fp, &config.em_speaker, config.use_pct);
        if !models.contains_key(&model_key) {
            log::info!("training {} speaker models", train.len());
            let trained = train
                .par_iter()
                .zip(&fe.train)
                .map(|((spk, _), x)| train_speaker(spk, x, config))
                .collect::<Result<Vec<_>>>()?;
            models.insert(model_key.clone(), trained);
        }
        let speaker_models = &models[&model_key];

        let needs_g = config.divergence.needs_test_density();
        let density_key = cache_key(fp, &config.em_test, config.use_pct);
        if needs_g && !densities.contains_key(&density_key) {
            let fitted = test
                .par_iter()
                .zip(&fe.test)
                .map(|(entry, x)| {
                    TestDensity::fit(x, &config.em_test, config.use_pct)
                        .map(Some)
                        .map_err(|e| utterance_error(entry, e))
                })
                .collect::<Result<Vec<_>>>()?;
            densities.insert(density_key.clone(), fitted);
        }
        let none: Vec<Option<TestDensity>> = vec![None; test.len()];
        let dens = if needs_g { &densities[&density_key] } else { &none };

        let per_utt = test
            .par_iter()
            .zip(&fe.test)
            .zip(dens)
            .map(|((entry, x), g)| {
                score_with_density(speaker_models, x, g.as_ref(), &config.divergence)
                    .map_err(|e| utterance_error(entry, e))
            })
            .collect::<Result<Vec<_>>>()?;
        scores.push(per_utt);
    }

    Ok(ScoredCorpus {
        configs: configs.to_vec(),
        test: test
            .iter()
            .map(|e| (e.speaker_id.clone(), e.utterance_index))
            .collect(),
        scores,
        num_speakers: train.len(),
        split: split_spec,
    })
}

fn utterance_error(entry: &ManifestEntry, e: Error) -> Error {
    match e {
        Error::Utterance { .. } => e,
        other => Error::Utterance {
            speaker_id: entry.speaker_id.clone(),
            utterance_index: entry.utterance_index,
            source: Box::new(other),
        },
    }
}

/// Trains and tests every configuration. With `options.combine`, per-utterance
/// score maps are also fused across all configurations.
pub fn evaluate(
    manifest: &CorpusManifest,
    split_spec: SplitSpec,
    configs: &[ClassifierConfig],
    options: EvalOptions,
) -> Result<EvaluationReport> {
    let scored = score_corpus(manifest, split_spec, configs)?;
    let members: Vec<usize> = (0..configs.len()).collect();
    scored.report(&members, options.combine.then_some(options.fusion))
}

/// Cartesian grid over configuration keys. The first axis varies slowest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepGrid {
    axes: Vec<(String, Vec<String>)>,
}

impl SweepGrid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn axis<S: Into<String>>(mut self, key: &str, values: impl IntoIterator<Item = S>) -> Result<Self> {
        self.push_axis(key, values.into_iter().map(Into::into).collect())?;
        Ok(self)
    }

    /// Parses `key=v1,v2,...`.
    pub fn push_spec(&mut self, spec: &str) -> Result<()> {
        let (key, values) = spec.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("grid axis '{spec}' must look like key=v1,v2"))
        })?;
        let values = values
            .split(',')
            .map(|v| v.trim().to_owned())
            .filter(|v| !v.is_empty())
            .collect();
        self.push_axis(key.trim(), values)
    }

    fn push_axis(&mut self, key: &str, values: Vec<String>) -> Result<()> {
        if values.is_empty() {
            return Err(Error::InvalidConfig(format!("grid axis '{key}' has no values")));
        }
        if self.axes.iter().any(|(k, _)| k == key) {
            return Err(Error::InvalidConfig(format!("grid axis '{key}' given twice")));
        }
        let mut probe = ClassifierConfig::default();
        for v in &values {
            if !set_classifier_key(&mut probe, key, v)? {
                return Err(Error::InvalidConfig(format!(
                    "'{key}' is not a classifier parameter and cannot be swept"
                )));
            }
        }
        self.axes.push((key.to_owned(), values));
        Ok(())
    }

    pub fn axes(&self) -> &[(String, Vec<String>)] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        if self.axes.is_empty() {
            0
        } else {
            self.axes.iter().map(|(_, v)| v.len()).product()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One configuration per grid point. A `feature_set` axis is applied
    /// before the others so the remaining keys refine the preset.
    pub fn configs(&self, base: &ClassifierConfig) -> Result<Vec<ClassifierConfig>> {
        if self.axes.is_empty() {
            return Err(Error::InvalidConfig("sweep grid is empty".into()));
        }
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; self.axes.len()];
        loop {
            let mut c = base.clone();
            let point: Vec<(&str, &str)> = self
                .axes
                .iter()
                .zip(&idx)
                .map(|((k, vals), &i)| (k.as_str(), vals[i].as_str()))
                .collect();
            for (k, v) in point.iter().filter(|(k, _)| *k == "feature_set") {
                set_classifier_key(&mut c, k, v)?;
            }
            for (k, v) in point.iter().filter(|(k, _)| *k != "feature_set") {
                set_classifier_key(&mut c, k, v)?;
            }
            c.validate()?;
            out.push(c);
            // odometer increment, last axis fastest
            let mut a = self.axes.len();
            loop {
                if a == 0 {
                    return Ok(out);
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < self.axes[a].1.len() {
                    break;
                }
                idx[a] = 0;
            }
        }
    }
}

/// Individual grid-point reports and fused ensembles over the front-end axes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub points: Vec<EvaluationReport>,
    /// One fused report per group of at least two grid points that differ
    /// only in [`ENSEMBLE_KEYS`].
    pub ensembles: Vec<EvaluationReport>,
}

impl SweepReport {
    pub fn reports(&self) -> impl Iterator<Item = &EvaluationReport> {
        self.points.iter().chain(&self.ensembles)
    }

    pub fn to_csv(&self) -> String {
        let mut out = CSV_HEADER.to_owned();
        for p in &self.points {
            p.csv_rows(&mut out);
        }
        for e in &self.ensembles {
            if let Some(c) = &e.combined {
                let members: Vec<String> = e.classifiers.iter().map(|c| c.label.clone()).collect();
                let _ = writeln!(
                    out,
                    "{},{},{}",
                    csv_field(&format!("combined {}", c.label)),
                    csv_field(&format!("fusion={};members={}", c.fusion, members.join("|"))),
                    c.accuracy
                );
            }
        }
        out
    }

    /// Accuracy table: one column per ensemble group, one row per
    /// front-end setting, and a final `Combined` row.
    pub fn summary_table(&self) -> String {
        let results: Vec<&ClassifierResult> = self.points.iter().map(|p| &p.classifiers[0]).collect();
        let mut columns: Vec<String> = Vec::new();
        let mut rows: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for r in &results {
            let col_label = ensemble_label(&r.config);
            let f = &r.config.features;
            let row_label = format!(
                "w={} shift={} band={}-{}",
                f.window_size, f.window_shift, f.min_freq, f.max_freq
            );
            let col = position_or_push(&mut columns, col_label);
            let row = position_or_push(&mut rows, row_label);
            cells.entry((row, col)).or_insert(r.accuracy);
        }
        let combined: Vec<Option<f64>> = columns
            .iter()
            .map(|col| {
                self.ensembles
                    .iter()
                    .filter_map(|e| e.combined.as_ref())
                    .find(|c| &c.label == col)
                    .map(|c| c.accuracy)
            })
            .collect();

        let row_w = rows.iter().map(String::len).max().unwrap_or(0).max("Combined".len());
        let col_w: Vec<usize> = columns.iter().map(|c| c.len().max(8)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:<row_w$}", "");
        for (c, w) in columns.iter().zip(&col_w) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
        let fmt_cell = |v: Option<f64>, w: usize| match v {
            Some(a) => format!("  {a:>w$.3}"),
            None => format!("  {:>w$}", "-"),
        };
        for (ri, r) in rows.iter().enumerate() {
            let _ = write!(out, "{r:<row_w$}");
            for (ci, w) in col_w.iter().enumerate() {
                out.push_str(&fmt_cell(cells.get(&(ri, ci)).copied(), *w));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<row_w$}", "Combined");
        for (v, w) in combined.iter().zip(&col_w) {
            out.push_str(&fmt_cell(*v, *w));
        }
        out.push('\n');
        out
    }
}

fn position_or_push(list: &mut Vec<String>, item: String) -> usize {
    match list.iter().position(|x| *x == item) {
        Some(i) => i,
        None => {
            list.push(item);
            list.len() - 1
        }
    }
}

/// Evaluates every grid point, then fuses each group of points that differ
/// only in front-end parameters, mirroring the "Combined" rows of an
/// accuracy table.
pub fn sweep(
    manifest: &CorpusManifest,
    split_spec: SplitSpec,
    base: &ClassifierConfig,
    grid: &SweepGrid,
    fusion: Fusion,
) -> Result<SweepReport> {
    let configs = grid.configs(base)?;
    let scored = score_corpus(manifest, split_spec, &configs)?;
    let points = (0..configs.len())
        .map(|c| scored.report(&[c], None))
        .collect::<Result<Vec<_>>>()?;

    // (non-ensemble parameters, member indices)
    type Group = (Vec<(&'static str, String)>, Vec<usize>);
    let mut groups: Vec<Group> = Vec::new();
    for (i, c) in configs.iter().enumerate() {
        let key: Vec<(&'static str, String)> = classifier_pairs(c)
            .into_iter()
            .filter(|(k, _)| !ENSEMBLE_KEYS.contains(k))
            .collect();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, members)) => members.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    let ensembles = groups
        .iter()
        .filter(|(_, members)| members.len() >= 2)
        .map(|(_, members)| scored.report(members, Some(fusion)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { points, ensembles })
}
