//! Command-line front end for the speaker identification toolkit.
//!
//! [`run`] parses arguments, executes one subcommand and maps failures to
//! exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use disparity_id::archive::{write_atomic, ModelArchive};
use disparity_id::config::{classifier_pairs, ToolkitConfig};
use disparity_id::corpus::synth::{synth_audio_corpus, write_audio_corpus, AudioSynthConfig};
use disparity_id::corpus::{evaluate, load_manifest, sweep, EvalOptions, SweepGrid};
use disparity_id::divergence::{write_raf_csv, GridSpec};
use disparity_id::features::{build_features, load_wav, FeatureMatrix};
use disparity_id::{identify, train_speaker, ErrorKind};

pub const THREADS_ENV: &str = "DISPARITY_ID_THREADS";

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// A command-line mistake not caught by argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "disparity-id", version, about = "Robust minimum-divergence speaker identification")]
pub struct Cli {
    /// Log progress to stderr
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model per speaker and write a model archive
    Train(TrainArgs),
    /// Rank enrolled speakers for a single WAV file
    Identify(IdentifyArgs),
    /// Train and test on a manifest split and report accuracy
    Evaluate(EvaluateArgs),
    /// Evaluate every point of a parameter grid and fuse front-end ensembles
    Sweep(EvaluateArgs),
    /// Export residual adjustment functions of LD, HD and PCS as CSV
    RafCurves(RafArgs),
    /// Render a synthetic WAV corpus with a manifest
    Synth(SynthArgs),
}

/// Classifier parameters shared by every subcommand that trains or scores.
/// Precedence: these flags, then `--config`, then built-in defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct ClassifierArgs {
    /// Configuration file with `key = value` lines
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Disparity measure
    #[arg(long, value_parser = ["ld", "hd", "pcs"])]
    pub measure: Option<String>,
    /// Estimator type
    #[arg(long, value_parser = ["1", "2"])]
    pub estimator: Option<String>,
    /// Fraction of smallest residuals trimmed
    #[arg(long)]
    pub trim_low: Option<f64>,
    /// Fraction of largest residuals trimmed
    #[arg(long)]
    pub trim_high: Option<f64>,
    /// Residual rescaling exponent
    #[arg(long)]
    pub beta: Option<f64>,
    /// Rotate features by per-speaker principal components
    #[arg(long, overrides_with = "no_pct")]
    pub pct: bool,
    /// Use raw features without principal component rotation
    #[arg(long, overrides_with = "pct")]
    pub no_pct: bool,
    /// Seed for all EM initialisation
    #[arg(long)]
    pub seed: Option<u64>,
    /// Feature preset: fs1 or fs2
    #[arg(long)]
    pub feature_set: Option<String>,
    /// Any configuration key, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ClassifierArgs {
    /// Command-line layer as key/value pairs.
    pub fn overrides(&self) -> anyhow::Result<Vec<(String, String)>> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_owned(), v));
        if let Some(v) = &self.feature_set {
            push("feature_set", v.clone());
        }
        if let Some(v) = &self.measure {
            push("measure", v.clone());
        }
        if let Some(v) = &self.estimator {
            push("estimator", v.clone());
        }
        if let Some(v) = self.trim_low {
            push("trim_low", v.to_string());
        }
        if let Some(v) = self.trim_high {
            push("trim_high", v.to_string());
        }
        if let Some(v) = self.beta {
            push("beta", v.to_string());
        }
        if self.pct {
            push("use_pct", "true".into());
        }
        if self.no_pct {
            push("use_pct", "false".into());
        }
        if let Some(v) = self.seed {
            push("seed", v.to_string());
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            out.push((k.trim().to_owned(), v.trim().to_owned()));
        }
        Ok(out)
    }
}

/// Defaults, then each text layer in order, then the config file, then flags.
pub fn resolve_config(layers: &[&str], args: &ClassifierArgs) -> anyhow::Result<ToolkitConfig> {
    let mut config = ToolkitConfig::default();
    for layer in layers {
        config.apply_text(layer)?;
    }
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(|e| usage(format!("{e:#}")))?;
        config
            .apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))?;
    }
    let overrides = args.overrides()?;
    config.apply_pairs(overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    config.validate()?;
    Ok(config)
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus manifest (speaker<TAB>index<TAB>path)
    #[arg(long)]
    pub manifest: PathBuf,
    /// Archive to write
    #[arg(long, short)]
    pub output: PathBuf,
    /// Use only the first N utterances of each speaker (default: all)
    #[arg(long)]
    pub train_count: Option<usize>,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
}

#[derive(Args, Debug)]
pub struct IdentifyArgs {
    /// Model archive written by `train`
    #[arg(long)]
    pub archive: PathBuf,
    /// Test utterance
    #[arg(long)]
    pub wav: PathBuf,
    /// Print only the N best speakers
    #[arg(long)]
    pub top: Option<usize>,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Corpus manifest (speaker<TAB>index<TAB>path)
    #[arg(long)]
    pub manifest: PathBuf,
    /// Grid axis KEY=V1,V2,..., repeatable
    #[arg(long = "grid", value_name = "KEY=VALUES")]
    pub grid: Vec<String>,
    /// Fuse per-utterance scores across all classifiers
    #[arg(long)]
    pub combine: bool,
    /// Fusion rule: standardized or sum
    #[arg(long)]
    pub fusion: Option<String>,
    /// Training utterances per speaker
    #[arg(long)]
    pub train_count: Option<usize>,
    /// Test utterances per speaker
    #[arg(long)]
    pub test_count: Option<usize>,
    /// Report CSV (default: stdout)
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Also write the accuracy table and parameter record here
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub classifier: ClassifierArgs,
}

impl EvaluateArgs {
    fn resolve(&self) -> anyhow::Result<ToolkitConfig> {
        let mut args = self.classifier.clone();
        if let Some(n) = self.train_count {
            args.set.push(format!("train_count={n}"));
        }
        if let Some(n) = self.test_count {
            args.set.push(format!("test_count={n}"));
        }
        if let Some(f) = &self.fusion {
            args.set.push(format!("fusion={f}"));
        }
        if self.combine {
            args.set.push("combine=true".into());
        }
        resolve_config(&[], &args)
    }

    fn grid(&self) -> anyhow::Result<SweepGrid> {
        let mut grid = SweepGrid::new();
        for spec in &self.grid {
            grid.push_spec(spec)?;
        }
        Ok(grid)
    }
}

#[derive(Args, Debug)]
pub struct RafArgs {
    /// CSV to write (default: stdout)
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = GridSpec::default().start, allow_negative_numbers = true)]
    pub start: f64,
    #[arg(long, default_value_t = GridSpec::default().end, allow_negative_numbers = true)]
    pub end: f64,
    #[arg(long, default_value_t = GridSpec::default().step)]
    pub step: f64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory receiving WAV files and manifest.tsv
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub speakers: usize,
    #[arg(long, default_value_t = 10)]
    pub utterances: usize,
    /// Seconds per utterance
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 8000)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Additive noise level
    #[arg(long, default_value_t = AudioSynthConfig::default().noise_level)]
    pub noise: f64,
    /// Log-scale spread of speaker frequency warping
    #[arg(long, default_value_t = AudioSynthConfig::default().speaker_variation)]
    pub variation: f64,
}

/// Maps an error chain to an exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<disparity_id::Error>() {
            return match e.kind() {
                ErrorKind::Usage => EXIT_USAGE,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numeric => EXIT_NUMERIC,
            };
        }
    }
    EXIT_DATA
}

/// Caps the global rayon pool at `DISPARITY_ID_THREADS` when set.
pub fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    // a pool may already exist when run() is called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let result = configure_threads().and_then(|()| execute(cli.command));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command) -> anyhow::Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match command {
        Command::Train(a) => cmd_train(&a, &mut out),
        Command::Identify(a) => cmd_identify(&a, &mut out),
        Command::Evaluate(a) => cmd_evaluate(&a, &mut out),
        Command::Sweep(a) => cmd_sweep(&a, &mut out),
        Command::RafCurves(a) => cmd_raf_curves(&a, &mut out),
        Command::Synth(a) => cmd_synth(&a, &mut out),
    }
}

struct SpeakerTraining {
    features: FeatureMatrix,
    utterances: usize,
    seconds: Option<f64>,
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = resolve_config(&[], &args.classifier)?;
    let manifest = load_manifest(&args.manifest)?;
    let speakers = manifest.speakers();
    let per_speaker = speakers
        .par_iter()
        .map(|spk| {
            let mut utts = manifest.utterances_of(spk);
            if let Some(n) = args.train_count {
                utts.truncate(n);
            }
            let parts = utts
                .par_iter()
                .map(|e| e.features(&config.classifier.features))
                .collect::<disparity_id::Result<Vec<_>>>()?;
            let mut seconds = Some(0.0);
            for e in &utts {
                seconds = match (seconds, e.duration_secs()?) {
                    (Some(a), Some(b)) => Some(a + b),
                    _ => None,
                };
            }
            Ok(SpeakerTraining {
                features: FeatureMatrix::concat_all(&parts)?,
                utterances: utts.len(),
                seconds,
            })
        })
        .collect::<disparity_id::Result<Vec<_>>>()?;
    if per_speaker.iter().any(|s| s.utterances == 0) {
        return Err(usage("--train-count must be at least 1"));
    }
    let models = speakers
        .par_iter()
        .zip(&per_speaker)
        .map(|(spk, t)| train_speaker(spk, &t.features, &config.classifier))
        .collect::<disparity_id::Result<Vec<_>>>()?;
    let archive = ModelArchive::new(config.classifier.features.clone(), config.to_text(), models)?;
    archive.save(&args.output)?;

    let frames: usize = per_speaker.iter().map(|s| s.features.num_frames()).sum();
    let utterances: usize = per_speaker.iter().map(|s| s.utterances).sum();
    let seconds: f64 = per_speaker.iter().filter_map(|s| s.seconds).sum();
    writeln!(
        out,
        "trained {} speakers from {utterances} utterances ({frames} frames, {seconds:.2} s of audio)",
        speakers.len()
    )?;
    for (spk, t) in speakers.iter().zip(&per_speaker) {
        writeln!(
            out,
            "  {spk}\t{} utterances\t{} frames\t{:.2} s",
            t.utterances,
            t.features.num_frames(),
            t.seconds.unwrap_or(0.0)
        )?;
    }
    writeln!(out, "wrote {}", args.output.display())?;
    Ok(())
}

pub fn cmd_identify(args: &IdentifyArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let archive = ModelArchive::load(&args.archive)?;
    let config = resolve_config(&[&archive.training_config], &args.classifier)?;
    if config.classifier.features != archive.feature_config {
        return Err(usage(
            "feature parameters are fixed by the archive and cannot be overridden at identify time",
        ));
    }
    let signal = load_wav(&args.wav)?;
    let features = build_features(&signal, &archive.feature_config)?;
    let decision = identify(&archive.models, &features, &config.classifier)?;
    let ranking = decision.ranking();
    let shown = args.top.unwrap_or(ranking.len()).min(ranking.len());
    writeln!(out, "rank\tspeaker\tscore")?;
    for (i, (spk, score)) in ranking.iter().take(shown).enumerate() {
        writeln!(out, "{}\t{spk}\t{score:.6}", i + 1)?;
    }
    writeln!(out, "decision\t{}", decision.predicted)?;
    Ok(())
}

fn emit_reports(
    csv: &str,
    table: &str,
    dump: &str,
    args: &EvaluateArgs,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    write!(out, "{table}")?;
    match &args.output {
        Some(path) => {
            write_atomic(path, csv.as_bytes())?;
            writeln!(out, "wrote {}", path.display())?;
        }
        None => write!(out, "\n{csv}")?,
    }
    if let Some(path) = &args.summary {
        write_atomic(path, format!("{table}\n{dump}").as_bytes())?;
    }
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = args.resolve()?;
    let manifest = load_manifest(&args.manifest)?;
    let configs = if args.grid.is_empty() {
        vec![config.classifier.clone()]
    } else {
        args.grid()?.configs(&config.classifier)?
    };
    let report = evaluate(
        &manifest,
        config.split,
        &configs,
        EvalOptions {
            combine: config.combine,
            fusion: config.fusion,
        },
    )?;
    emit_reports(&report.to_csv(), &report.summary_table(), &report.config_dump(), args, out)
}

pub fn cmd_sweep(args: &EvaluateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = args.resolve()?;
    if args.grid.is_empty() {
        return Err(usage("sweep needs at least one --grid KEY=V1,V2 axis"));
    }
    let grid = args.grid()?;
    let manifest = load_manifest(&args.manifest)?;
    let report = sweep(&manifest, config.split, &config.classifier, &grid, config.fusion)?;
    let mut dump = format!(
        "train_count = {}\ntest_count = {}\nfusion = {}\n",
        config.split.train_count, config.split.test_count, config.fusion
    );
    for (i, p) in report.points.iter().enumerate() {
        dump.push_str(&format!("[point {}]\n", i + 1));
        for (k, v) in classifier_pairs(&p.classifiers[0].config) {
            dump.push_str(&format!("{k} = {v}\n"));
        }
    }
    emit_reports(&report.to_csv(), &report.summary_table(), &dump, args, out)
}

pub fn cmd_raf_curves(args: &RafArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let grid = GridSpec {
        start: args.start,
        end: args.end,
        step: args.step,
    };
    let mut csv = Vec::new();
    write_raf_csv(&mut csv, &grid)?;
    match &args.output {
        Some(path) => {
            write_atomic(path, &csv)?;
            writeln!(out, "wrote {} rows to {}", grid.len(), path.display())?;
        }
        None => out.write_all(&csv)?,
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = AudioSynthConfig {
        num_speakers: args.speakers,
        utterances_per_speaker: args.utterances,
        duration_secs: args.duration,
        sample_rate: args.sample_rate,
        seed: args.seed,
        noise_level: args.noise,
        speaker_variation: args.variation,
        ..AudioSynthConfig::default()
    };
    if args.output_dir.exists() && !args.output_dir.is_dir() {
        bail!(usage(format!("{} is not a directory", args.output_dir.display())));
    }
    std::fs::create_dir_all(&args.output_dir)
        .with_context(|| format!("creating {}", args.output_dir.display()))?;
    let corpus = synth_audio_corpus(&config)?;
    let manifest = write_audio_corpus(&corpus, &args.output_dir)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in corpus.manifest.entries() {
        *counts.entry(e.speaker_id.as_str()).or_default() += 1;
    }
    writeln!(
        out,
        "wrote {} utterances from {} speakers; manifest {}",
        corpus.manifest.len(),
        counts.len(),
        display_path(&manifest)
    )?;
    Ok(())
}

fn display_path(p: &Path) -> String {
    p.display().to_string()
}
