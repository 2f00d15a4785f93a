//! Pair construction and the evaluation report.
//!
//! Each track contributes its distinct version pairs plus one
//! self-comparison as positives (7 pairs for an original with three
//! versions) and the same number of negatives against other tracks.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::store::CorpusFeatures;
use super::PipelineError;
use crate::detect::{
    auc, compute_metrics, kfold_threshold_cv, out_of_fold_predictions, similarity_from_embeddings,
    stratified_folds, ConfusionMatrix, CvResult, DetectConfig, Metrics, SimilarityMatrix,
};
use crate::dtw::{dtw_distance, fit_threshold};
use crate::embedder::{aligned_segment, EmbeddingVector, SimilarityModel, TrackInfo, VersionInfo};
use crate::features::FeatureKind;

const NEGATIVE_ATTEMPTS: usize = 64;
const PAIR_SALT: u64 = 0x7061_6972_7321;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EvalPair {
    pub track_a: String,
    pub version_a: String,
    pub track_b: String,
    pub version_b: String,
    pub similar: bool,
}

fn usable(track: &TrackInfo) -> Vec<&VersionInfo> {
    track.versions.iter().filter(|v| v.segments > 0).collect()
}

/// Balanced positive and negative song pairs.
pub fn build_eval_pairs(tracks: &[TrackInfo], seed: u64) -> Result<Vec<EvalPair>, PipelineError> {
    let tracks: Vec<(&TrackInfo, Vec<&VersionInfo>)> = tracks
        .iter()
        .map(|t| (t, usable(t)))
        .filter(|(_, v)| !v.is_empty())
        .collect();
    if tracks.len() < 2 {
        return Err(PipelineError::Invalid(format!(
            "balanced pairs need at least two tracks with audio, found {}",
            tracks.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ PAIR_SALT);
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut seen = HashSet::new();
    for (t, (track, versions)) in tracks.iter().enumerate() {
        let pair = |a: &VersionInfo, other: &TrackInfo, b: &VersionInfo, similar| EvalPair {
            track_a: track.id.clone(),
            version_a: a.id.clone(),
            track_b: other.id.clone(),
            version_b: b.id.clone(),
            similar,
        };
        let before = positives.len();
        for i in 0..versions.len() {
            for j in i + 1..versions.len() {
                positives.push(pair(versions[i], track, versions[j], true));
            }
        }
        positives.push(pair(versions[0], track, versions[0], true));
        for _ in before..positives.len() {
            let mut candidate = None;
            for _ in 0..NEGATIVE_ATTEMPTS {
                let mut u = rng.gen_range(0..tracks.len() - 1);
                if u >= t {
                    u += 1;
                }
                let (other, other_versions) = &tracks[u];
                let a = versions[rng.gen_range(0..versions.len())];
                let b = other_versions[rng.gen_range(0..other_versions.len())];
                let key = if track.id < other.id {
                    (
                        track.id.clone(),
                        a.id.clone(),
                        other.id.clone(),
                        b.id.clone(),
                    )
                } else {
                    (
                        other.id.clone(),
                        b.id.clone(),
                        track.id.clone(),
                        a.id.clone(),
                    )
                };
                candidate = Some(pair(a, other, b, false));
                if seen.insert(key) {
                    break;
                }
            }
            negatives.push(candidate.expect("at least one attempt"));
        }
    }
    positives.extend(negatives);
    Ok(positives)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongReport {
    /// Config chosen by cross-validation on all pairs.
    pub cv: CvResult,
    /// Configs fitted without each held-out fold.
    pub fold_configs: Vec<DetectConfig>,
    /// Out-of-fold predictions against the labels.
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub feature: String,
    pub fold_thresholds: Vec<f64>,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// Computed on negated normalized costs.
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tracks: usize,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    pub kfold: usize,
    pub segment: LevelReport,
    pub song: SongReport,
    pub baseline: Option<BaselineReport>,
}

fn version_info<'a>(
    tracks: &'a [TrackInfo],
    track: &str,
    version: &str,
) -> Option<&'a VersionInfo> {
    tracks
        .iter()
        .find(|t| t.id == track)?
        .versions
        .iter()
        .find(|v| v.id == version)
}

/// Normalized DTW cost of every pair on whole-version `kind` features.
pub fn baseline_scores(
    corpus: &CorpusFeatures,
    pairs: &[EvalPair],
    kind: FeatureKind,
) -> Result<Vec<f64>, PipelineError> {
    let mut cache = HashMap::new();
    let mut get = |t: &str, v: &str| -> Result<crate::features::FeatureSequence, PipelineError> {
        if let Some(seq) = cache.get(&(t.to_string(), v.to_string())) {
            return Ok(Clone::clone(seq));
        }
        let seq = corpus
            .concatenated(t, v, kind)
            .ok_or_else(|| PipelineError::Invalid(format!("no features for {t}/{v}")))?;
        cache.insert((t.to_string(), v.to_string()), seq.clone());
        Ok(seq)
    };
    pairs
        .iter()
        .map(|p| {
            let (a, b) = (
                get(&p.track_a, &p.version_a)?,
                get(&p.track_b, &p.version_b)?,
            );
            Ok(dtw_distance(&a, &b)?.normalized_cost)
        })
        .collect()
}

fn baseline_report(
    corpus: &CorpusFeatures,
    pairs: &[EvalPair],
    labels: &[bool],
    kind: FeatureKind,
    k: usize,
    seed: u64,
) -> Result<BaselineReport, PipelineError> {
    let costs = baseline_scores(corpus, pairs, kind)?;
    let folds = stratified_folds(labels, k, seed);
    let mut predicted = vec![false; labels.len()];
    let mut fold_thresholds = Vec::with_capacity(k);
    for (f, fold) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(o, _)| o != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        let threshold = fit_threshold(
            &train.iter().map(|&i| costs[i]).collect::<Vec<_>>(),
            &train.iter().map(|&i| labels[i]).collect::<Vec<_>>(),
        )?;
        for &i in fold {
            predicted[i] = costs[i] < threshold;
        }
        fold_thresholds.push(threshold);
    }
    let confusion = ConfusionMatrix::from_predictions(&predicted, labels);
    let negated: Vec<f64> = costs.iter().map(|c| -c).collect();
    Ok(BaselineReport {
        feature: kind.to_string(),
        fold_thresholds,
        confusion,
        metrics: compute_metrics(&confusion),
        auc: auc(&negated, labels)?,
    })
}

/// Scores every pair with `model`, fits detection thresholds by `k`-fold
/// cross-validation and, optionally, evaluates a DTW baseline on the same
/// pairs and folds.
pub fn evaluate(
    model: &SimilarityModel,
    corpus: &CorpusFeatures,
    pairs: &[EvalPair],
    k: usize,
    seed: u64,
    window_seconds: f64,
    baseline: Option<FeatureKind>,
) -> Result<EvaluationReport, PipelineError> {
    let mut embeddings: HashMap<(String, String), Vec<EmbeddingVector>> = HashMap::new();
    let mut embed = |t: &str, v: &str| -> Result<Vec<EmbeddingVector>, PipelineError> {
        let key = (t.to_string(), v.to_string());
        if !embeddings.contains_key(&key) {
            let list = corpus
                .version_segments(t, v)
                .iter()
                .map(|s| model.embed(&s.input))
                .collect::<Result<Vec<_>, _>>()?;
            embeddings.insert(key.clone(), list);
        }
        Ok(embeddings[&key].clone())
    };

    let mut matrices = Vec::with_capacity(pairs.len());
    let mut cell_scores = Vec::new();
    let mut cell_labels = Vec::new();
    for p in pairs {
        let (ea, eb) = (
            embed(&p.track_a, &p.version_a)?,
            embed(&p.track_b, &p.version_b)?,
        );
        let s = similarity_from_embeddings(model, &ea, &eb)?;
        if p.similar {
            let (Some(va), Some(vb)) = (
                version_info(&corpus.tracks, &p.track_a, &p.version_a),
                version_info(&corpus.tracks, &p.track_b, &p.version_b),
            ) else {
                return Err(PipelineError::Invalid(format!(
                    "pair {}/{} not in corpus",
                    p.track_a, p.version_a
                )));
            };
            for i in 0..ea.len() {
                if let Some(j) = aligned_segment(va, i, vb, window_seconds) {
                    cell_scores.push(s.values[[i, j]]);
                    cell_labels.push(true);
                }
            }
        } else {
            cell_scores.extend(s.values.iter().copied());
            cell_labels.extend(std::iter::repeat_n(false, s.values.len()));
        }
        matrices.push(s);
    }
    let labels: Vec<bool> = pairs.iter().map(|p| p.similar).collect();
    let report_song = song_report(&matrices, &labels, k, seed)?;

    let gamma = report_song.cv.config.gamma;
    let predicted: Vec<bool> = cell_scores.iter().map(|&s| s >= gamma).collect();
    let segment_cm = ConfusionMatrix::from_predictions(&predicted, &cell_labels);
    let segment = LevelReport {
        confusion: segment_cm,
        metrics: compute_metrics(&segment_cm),
        auc: auc(&cell_scores, &cell_labels).ok(),
    };
    let baseline = baseline
        .map(|kind| baseline_report(corpus, pairs, &labels, kind, k, seed))
        .transpose()?;
    Ok(EvaluationReport {
        tracks: pairs
            .iter()
            .map(|p| &p.track_a)
            .collect::<HashSet<_>>()
            .len(),
        positive_pairs: labels.iter().filter(|&&y| y).count(),
        negative_pairs: labels.iter().filter(|&&y| !y).count(),
        kfold: k,
        segment,
        song: report_song,
        baseline,
    })
}

fn song_report(
    matrices: &[SimilarityMatrix],
    labels: &[bool],
    k: usize,
    seed: u64,
) -> Result<SongReport, PipelineError> {
    let cv = kfold_threshold_cv(matrices, labels, k, seed)?;
    let oof = out_of_fold_predictions(matrices, labels, k, seed)?;
    let confusion = ConfusionMatrix::from_predictions(&oof.predicted, labels);
    Ok(SongReport {
        cv,
        fold_configs: oof.fold_configs,
        confusion,
        metrics: compute_metrics(&confusion),
    })
}

fn metrics_table(out: &mut String, metrics: &Metrics) {
    let _ = writeln!(
        out,
        "  {:<14}{:>10}{:>10}{:>10}{:>10}",
        "class", "precision", "recall", "f1", "support"
    );
    for (name, m) in [
        ("different", &metrics.different),
        ("similar", &metrics.similar),
        ("weighted avg", &metrics.weighted),
    ] {
        let _ = writeln!(
            out,
            "  {name:<14}{:>10.2}{:>10.2}{:>10.2}{:>10}",
            m.precision, m.recall, m.f1, m.support
        );
    }
}

fn confusion_table(out: &mut String, cm: &ConfusionMatrix) {
    let _ = writeln!(out, "  {:<10}{:>10}{:>10}", "pred\\gt", "P", "N");
    let _ = writeln!(out, "  {:<10}{:>10}{:>10}", "P", cm.tp, cm.fp);
    let _ = writeln!(out, "  {:<10}{:>10}{:>10}", "N", cm.fn_, cm.tn);
}

/// Human-readable rendering of a report.
pub fn format_report(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} tracks, {} positive and {} negative pairs, {}-fold cross-validation",
        report.tracks, report.positive_pairs, report.negative_pairs, report.kfold
    );
    let cv = &report.song.cv;
    let _ = writeln!(
        out,
        "fitted gamma {:.2}, proportion {:.2} (mean held-out F1 {:.3})\n",
        cv.config.gamma, cv.config.prop_threshold, cv.mean_f1
    );
    let _ = writeln!(out, "Segment level");
    metrics_table(&mut out, &report.segment.metrics);
    if let Some(a) = report.segment.auc {
        let _ = writeln!(out, "  AUC {a:.3}");
    }
    confusion_table(&mut out, &report.segment.confusion);
    let _ = writeln!(out, "\nSong level (out-of-fold)");
    metrics_table(&mut out, &report.song.metrics);
    confusion_table(&mut out, &report.song.confusion);
    if let Some(b) = &report.baseline {
        let _ = writeln!(out, "\nDTW baseline ({})", b.feature);
        let s = &b.metrics.similar;
        let _ = writeln!(
            out,
            "  precision {:.2}  recall {:.2}  f1 {:.2}  AUC {:.2}",
            s.precision, s.recall, s.f1, b.auc
        );
    }
    out
}
