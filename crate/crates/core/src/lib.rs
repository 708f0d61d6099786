//! Closed-set speaker identification by robust minimum-divergence scoring.
//!
//! The pipeline: MFCC (and delta-MFCC) features per utterance, a
//! diagonal-covariance GMM per speaker trained on features rotated by the
//! speaker's principal component transformation, and identification by
//! choosing the speaker whose model is closest to the test utterance under a
//! trimmed, rescaled disparity (likelihood disparity, Hellinger distance or
//! Pearson chi-square). Several classifiers can be fused by summing
//! standardized per-speaker scores.

pub mod archive;
pub mod config;
pub mod corpus;
pub mod error;
pub mod features;
pub mod gmm;
pub mod math;
pub mod pct;
pub mod divergence;
pub mod identify;

pub use error::{Error, ErrorKind, Result};
pub use features::{build_features, AudioSignal, FeatureConfig, FeatureMatrix};
pub use gmm::{em_fit, EmConfig, GmmModel};
pub use pct::{pct_apply, pct_compute, PctMatrix};
pub use divergence::{DivergenceSpec, EstimatorType, Measure, ResidualSet};
pub use identify::{combine, identify, train_speaker, ClassifierConfig, Decision, Fusion, SpeakerModel};
pub use archive::ModelArchive;
pub use config::ToolkitConfig;
pub use corpus::{evaluate, load_manifest, split, sweep, CorpusManifest, EvaluationReport, SplitSpec, SweepGrid};
