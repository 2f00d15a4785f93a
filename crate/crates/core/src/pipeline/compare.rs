use std::path::{Path, PathBuf};

use serde::Serialize;

use super::store::{raw_features, SegmentFeatures};
use super::PipelineError;
use crate::detect::{
    detect, similarity_matrix, write_matrix_csv, write_matrix_pgm, write_verdict_json,
    DetectConfig, SimilarityMatrix, Verdict,
};
use crate::dtw::{dtw_distance, DtwResult};
use crate::embedder::SimilarityModel;
use crate::features::{CqtKernel, CqtParams, FeatureKind, FeatureSequence};
use crate::midi::parse_midi;
use crate::render::{read_wav, resample_linear, segment_audio, synthesize, AudioBuffer};

/// Loads a `.wav` (resampled to `sample_rate`) or renders a `.mid`.
pub fn load_piece_audio(path: &Path, sample_rate: u32) -> Result<AudioBuffer, PipelineError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "mid" | "midi" => {
            let bytes = std::fs::read(path).map_err(|e| PipelineError::at(path, e))?;
            let piece = parse_midi(&bytes).map_err(|e| PipelineError::at(path, e))?;
            Ok(synthesize(&piece, sample_rate))
        }
        "wav" => {
            let audio = read_wav(path).map_err(|e| PipelineError::at(path, e))?;
            if audio.sample_rate == sample_rate {
                return Ok(audio);
            }
            let ratio = sample_rate as f64 / audio.sample_rate as f64;
            Ok(AudioBuffer::new(
                sample_rate,
                resample_linear(&audio, ratio).samples,
            ))
        }
        _ => Err(PipelineError::Invalid(format!(
            "{}: expected a .wav or .mid file",
            path.display()
        ))),
    }
}

fn piece_segments(
    path: &Path,
    sample_rate: u32,
    window_seconds: f64,
    kernel: &CqtKernel,
    model: Option<&SimilarityModel>,
) -> Result<Vec<SegmentFeatures>, PipelineError> {
    let audio = load_piece_audio(path, sample_rate)?;
    let input = model.map(|m| m.input).unwrap_or_default();
    let segments = segment_audio(&audio, window_seconds, "piece", "audio");
    if segments.is_empty() {
        return Err(PipelineError::Invalid(format!(
            "{}: shorter than half a {window_seconds} s window",
            path.display()
        )));
    }
    segments
        .iter()
        .map(|s| {
            raw_features(&s.audio, kernel)
                .and_then(|r| r.into_segment(&input))
                .map_err(|e| PipelineError::at(path, e))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ComparisonResult {
    Model {
        verdict: Verdict,
        #[serde(skip)]
        matrix: SimilarityMatrix,
    },
    Baseline {
        feature: String,
        total_cost: f64,
        path_length: usize,
        normalized_cost: f64,
    },
}

/// Files written by [`ComparisonResult::write`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonOutput {
    pub files: Vec<PathBuf>,
}

impl ComparisonResult {
    /// Writes `similarity.csv`, `similarity.pgm` and `verdict.json` (model
    /// mode) or `baseline.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<ComparisonOutput, PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::at(dir, e))?;
        let mut files = Vec::new();
        match self {
            ComparisonResult::Model { verdict, matrix } => {
                let csv = dir.join("similarity.csv");
                write_matrix_csv(&csv, matrix)?;
                let pgm = dir.join("similarity.pgm");
                write_matrix_pgm(&pgm, matrix, 16)?;
                let json = dir.join("verdict.json");
                write_verdict_json(&json, verdict)?;
                files.extend([csv, pgm, json]);
            }
            ComparisonResult::Baseline { .. } => {
                let json = dir.join("baseline.json");
                let mut text = serde_json::to_string_pretty(self)?;
                text.push('\n');
                std::fs::write(&json, text).map_err(|e| PipelineError::at(&json, e))?;
                files.push(json);
            }
        }
        Ok(ComparisonOutput { files })
    }
}

fn join(parts: &[SegmentFeatures], kind: FeatureKind) -> FeatureSequence {
    let views: Vec<_> = parts.iter().map(|p| p.get(kind).frames.view()).collect();
    let frames = ndarray::concatenate(ndarray::Axis(0), &views).expect("segments share a width");
    FeatureSequence::new(kind, parts[0].get(kind).frame_rate, frames)
}

/// Compares two pieces with the model, or with a DTW baseline on the given
/// raw feature when `baseline` is set.
pub fn compare_files(
    a: &Path,
    b: &Path,
    model: Option<&SimilarityModel>,
    config: &DetectConfig,
    sample_rate: u32,
    window_seconds: f64,
    baseline: Option<FeatureKind>,
) -> Result<ComparisonResult, PipelineError> {
    config.validate()?;
    let kernel = CqtKernel::new(CqtParams::default(), sample_rate)?;
    let seg_a = piece_segments(a, sample_rate, window_seconds, &kernel, model)?;
    let seg_b = piece_segments(b, sample_rate, window_seconds, &kernel, model)?;
    if let Some(kind) = baseline {
        let DtwResult {
            total_cost,
            path_length,
            normalized_cost,
        } = dtw_distance(&join(&seg_a, kind), &join(&seg_b, kind))?;
        return Ok(ComparisonResult::Baseline {
            feature: kind.to_string(),
            total_cost,
            path_length,
            normalized_cost,
        });
    }
    let model = model.ok_or_else(|| {
        PipelineError::Invalid("a checkpoint is required unless a baseline is chosen".into())
    })?;
    let inputs =
        |segs: &[SegmentFeatures]| segs.iter().map(|s| s.input.clone()).collect::<Vec<_>>();
    let mut matrix = similarity_matrix(model, &inputs(&seg_a), &inputs(&seg_b))?;
    matrix.row_ids = (0..seg_a.len()).map(|i| format!("a{i:04}")).collect();
    matrix.col_ids = (0..seg_b.len()).map(|j| format!("b{j:04}")).collect();
    let verdict = detect(&matrix, config);
    Ok(ComparisonResult::Model { verdict, matrix })
}
