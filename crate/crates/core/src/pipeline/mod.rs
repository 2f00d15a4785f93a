//! End-to-end workflows: corpus augmentation, rendering with a feature
//! cache, training, pairwise comparison and evaluation reports.
//!
//! Every stage is a plain function so the command-line tool and the tests
//! drive exactly the same code.

mod augment;
mod compare;
mod evaluate;
mod manifest;
mod store;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{augment_corpus, augment_directory, version_seed, AugmentSummary};
pub use compare::{compare_files, load_piece_audio, ComparisonOutput, ComparisonResult};
pub use evaluate::{
    baseline_scores, build_eval_pairs, evaluate, format_report, BaselineReport, EvalPair,
    EvaluationReport, LevelReport, SongReport,
};
pub use manifest::{
    CorpusManifest, ManifestTrack, ManifestVersion, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use store::{
    build_feature_store, raw_features, segment_features, CorpusFeatures, RawFeatures,
    SegmentFeatures, StoreConfig, StoreStats,
};
pub use train::{train_corpus, write_loss_csv, TrainOutcome};

use crate::augment::AugmentError;
use crate::detect::{DetectConfig, DetectError};
use crate::dtw::DtwError;
use crate::embedder::{EmbedError, InputConfig, TrainConfig};
use crate::features::FeaturesError;
use crate::melody::MelodyError;
use crate::midi::MidiError;
use crate::render::RenderError;

/// Sample rate used by the workflows; low enough to keep desk-scale runs
/// short while covering the CQT range.
pub const PIPELINE_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad user input or configuration.
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Midi(#[from] MidiError),
    #[error(transparent)]
    Melody(#[from] MelodyError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Features(#[from] FeaturesError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Dtw(#[from] DtwError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// True when the failure stems from the caller's input rather than
    /// from running the workflow.
    pub fn is_invalid_input(&self) -> bool {
        match self {
            PipelineError::Invalid(_) | PipelineError::Midi(_) | PipelineError::Json(_) => true,
            PipelineError::File { source, .. } => source.is_invalid_input(),
            PipelineError::Embed(EmbedError::Config(_))
            | PipelineError::Detect(DetectError::Config(_)) => true,
            PipelineError::Render(RenderError::Wav(_)) => true,
            _ => false,
        }
    }

    /// Attaches the file an error concerns.
    pub fn at(path: impl Into<PathBuf>, source: impl Into<PipelineError>) -> Self {
        PipelineError::File {
            path: path.into(),
            source: Box::new(source.into()),
        }
    }
}

/// All knobs of a project, serializable so runs can be reproduced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub corpus_root: PathBuf,
    pub cache_root: PathBuf,
    pub sample_rate: u32,
    pub window_seconds: f64,
    pub versions: usize,
    pub detect: DetectConfig,
    pub train: TrainConfig,
    pub input: InputConfig,
    pub seed: u64,
}

impl ProjectConfig {
    pub fn new(corpus_root: impl Into<PathBuf>) -> Self {
        let corpus_root = corpus_root.into();
        ProjectConfig {
            cache_root: corpus_root.join("cache"),
            corpus_root,
            sample_rate: PIPELINE_SAMPLE_RATE,
            window_seconds: crate::render::WINDOW_SECONDS,
            versions: 3,
            detect: DetectConfig::default(),
            train: TrainConfig::default(),
            input: InputConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(4000..=96_000).contains(&self.sample_rate) {
            return Err(PipelineError::Invalid(format!(
                "sample rate {} out of range",
                self.sample_rate
            )));
        }
        if !(self.window_seconds >= 2.0 && self.window_seconds.is_finite()) {
            return Err(PipelineError::Invalid(
                "window must be at least 2 seconds".into(),
            ));
        }
        if self.versions == 0 {
            return Err(PipelineError::Invalid(
                "need at least one version per piece".into(),
            ));
        }
        if self.input.pool == 0 {
            return Err(PipelineError::Invalid("pool size must be positive".into()));
        }
        self.detect.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn store_config(&self) -> StoreConfig {
        StoreConfig {
            sample_rate: self.sample_rate,
            window_seconds: self.window_seconds,
            input: self.input,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let config = ProjectConfig::new("/tmp/corpus");
        assert!(config.validate().is_ok());
        assert_eq!(config.versions, 3);
        assert_eq!(config.cache_root, PathBuf::from("/tmp/corpus/cache"));
    }

    #[test]
    fn invalid_fields_are_input_errors() {
        let mut config = ProjectConfig::new("x");
        config.train.margin = 0.0;
        let err = config.validate().unwrap_err();
        assert!(err.is_invalid_input(), "{err}");
        let mut config = ProjectConfig::new("x");
        config.detect.gamma = 1.0;
        assert!(config.validate().unwrap_err().is_invalid_input());
        let mut config = ProjectConfig::new("x");
        config.sample_rate = 100;
        assert!(config.validate().is_err());
    }
}
