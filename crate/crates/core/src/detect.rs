//! Song-level verdicts from segment similarities, plus evaluation metrics.
//!
//! A pair of pieces is compared through the matrix `S` of head scores over
//! all segment pairs. Thresholding at `gamma` gives a binary decision matrix
//! `D`; the pair is flagged when more than `prop_threshold` of the rows and
//! more than `prop_threshold` of the columns of `D` hold an active entry.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedder::{EmbedError, EmbeddingVector, SimilarityModel};
use crate::features::FeatureSequence;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("cannot build a similarity matrix from an empty segment list")]
    Empty,
    #[error("similarity value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid detection config: {0}")]
    Config(String),
    #[error("both classes are required")]
    SingleClass,
    #[error("fold {0} lacks one of the classes")]
    Fold(usize),
    #[error("{0} scores but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("malformed matrix file: {0}")]
    Format(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub values: Array2<f64>,
}

impl SimilarityMatrix {
    /// Wraps `values` with index ids `0..n`.
    pub fn new(values: Array2<f64>) -> Result<Self, DetectError> {
        let (r, c) = values.dim();
        Self::with_ids(
            (0..r).map(|i| i.to_string()).collect(),
            (0..c).map(|j| j.to_string()).collect(),
            values,
        )
    }

    pub fn with_ids(
        row_ids: Vec<String>,
        col_ids: Vec<String>,
        values: Array2<f64>,
    ) -> Result<Self, DetectError> {
        if values.is_empty() {
            return Err(DetectError::Empty);
        }
        if row_ids.len() != values.nrows() || col_ids.len() != values.ncols() {
            return Err(DetectError::Format(
                "id count does not match matrix shape".into(),
            ));
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DetectError::OutOfRange(bad));
        }
        Ok(SimilarityMatrix {
            row_ids,
            col_ids,
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Scores every pair of precomputed embeddings with the model's head.
pub fn similarity_from_embeddings(
    model: &SimilarityModel,
    a: &[EmbeddingVector],
    b: &[EmbeddingVector],
) -> Result<SimilarityMatrix, DetectError> {
    if a.is_empty() || b.is_empty() {
        return Err(DetectError::Empty);
    }
    let values = Array2::from_shape_fn((a.len(), b.len()), |(i, j)| model.score(&a[i], &b[j]));
    SimilarityMatrix::new(values)
}

/// Embeds each segment once, then scores all pairs.
pub fn similarity_matrix(
    model: &SimilarityModel,
    segments_a: &[FeatureSequence],
    segments_b: &[FeatureSequence],
) -> Result<SimilarityMatrix, DetectError> {
    if segments_a.is_empty() || segments_b.is_empty() {
        return Err(DetectError::Empty);
    }
    let ea = segments_a
        .iter()
        .map(|s| model.embed(s))
        .collect::<Result<Vec<_>, _>>()?;
    let eb = segments_b
        .iter()
        .map(|s| model.embed(s))
        .collect::<Result<Vec<_>, _>>()?;
    similarity_from_embeddings(model, &ea, &eb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub gamma: f64,
    pub prop_threshold: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            gamma: 0.99,
            prop_threshold: 0.4,
        }
    }
}

impl DetectConfig {
    pub fn new(gamma: f64, prop_threshold: f64) -> Result<Self, DetectError> {
        let config = DetectConfig {
            gamma,
            prop_threshold,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.gamma) {
            return Err(DetectError::Config(format!(
                "gamma {} must lie in (0, 1)",
                self.gamma
            )));
        }
        if !open(self.prop_threshold) {
            return Err(DetectError::Config(format!(
                "prop_threshold {} must lie in (0, 1)",
                self.prop_threshold
            )));
        }
        Ok(())
    }
}

/// `D_ij = 1` iff `S_ij >= gamma`.
pub fn decision_matrix(s: &SimilarityMatrix, gamma: f64) -> Array2<u8> {
    s.values.mapv(|v| u8::from(v >= gamma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub similar: bool,
    pub row_fraction: f64,
    pub col_fraction: f64,
    pub config: DetectConfig,
}

fn active_fractions(d: &Array2<u8>) -> (f64, f64) {
    let rows = d
        .rows()
        .into_iter()
        .filter(|r| r.iter().any(|&v| v != 0))
        .count();
    let cols = d
        .columns()
        .into_iter()
        .filter(|c| c.iter().any(|&v| v != 0))
        .count();
    (
        rows as f64 / d.nrows() as f64,
        cols as f64 / d.ncols() as f64,
    )
}

/// Aggregates a decision matrix; `config.gamma` is only echoed.
pub fn song_verdict(d: &Array2<u8>, config: &DetectConfig) -> Verdict {
    let (row_fraction, col_fraction) = if d.is_empty() {
        (0.0, 0.0)
    } else {
        active_fractions(d)
    };
    Verdict {
        similar: row_fraction > config.prop_threshold && col_fraction > config.prop_threshold,
        row_fraction,
        col_fraction,
        config: *config,
    }
}

pub fn detect(s: &SimilarityMatrix, config: &DetectConfig) -> Verdict {
    song_verdict(&decision_matrix(s, config.gamma), config)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, false) => cm.tn += 1,
                (false, true) => cm.fn_ += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub similar: ClassMetrics,
    pub different: ClassMetrics,
    /// Per-class values averaged with ground-truth support as weights.
    pub weighted: ClassMetrics,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(tp: u64, fp: u64, fn_: u64) -> ClassMetrics {
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: tp + fn_,
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Metrics {
    let similar = class_metrics(cm.tp, cm.fp, cm.fn_);
    let different = class_metrics(cm.tn, cm.fn_, cm.fp);
    let total = similar.support + different.support;
    let (ws, wd) = (
        ratio(similar.support, total),
        ratio(different.support, total),
    );
    let weighted = ClassMetrics {
        precision: ws * similar.precision + wd * different.precision,
        recall: ws * similar.recall + wd * different.recall,
        f1: ws * similar.f1 + wd * different.f1,
        support: total,
    };
    Metrics {
        similar,
        different,
        weighted,
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, DetectError> {
    if scores.len() != labels.len() {
        return Err(DetectError::LengthMismatch(scores.len(), labels.len()));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(DetectError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // Midranks (1-based) over tie groups.
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[k]] {
            end += 1;
        }
        let midrank = (k + end) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[k..=end].iter().filter(|&&i| labels[i]).count() as f64;
        k = end + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Gamma values searched by cross-validation: 0.05 steps up to 0.90, then
/// 0.01 steps to 0.99.
pub fn gamma_grid() -> Vec<f64> {
    let coarse = (0..=8).map(|i| 0.5 + 0.05 * i as f64);
    let fine = (1..=9).map(|i| 0.9 + 0.01 * i as f64);
    coarse
        .chain(fine)
        .map(|v| (v * 100.0).round() / 100.0)
        .collect()
}

pub fn prop_grid() -> Vec<f64> {
    (0..=16)
        .map(|i| ((0.1 + 0.05 * i as f64) * 100.0).round() / 100.0)
        .collect()
}

/// Row/column active fractions of every matrix at every grid gamma, so the
/// grid search only compares numbers.
struct FractionTable {
    gammas: Vec<f64>,
    /// `[matrix][gamma] -> (row, col)`
    fractions: Vec<Vec<(f64, f64)>>,
}

impl FractionTable {
    fn new(matrices: &[SimilarityMatrix], gammas: Vec<f64>) -> Self {
        let fractions = matrices
            .iter()
            .map(|m| {
                gammas
                    .iter()
                    .map(|&g| active_fractions(&decision_matrix(m, g)))
                    .collect()
            })
            .collect();
        FractionTable { gammas, fractions }
    }

    fn predict(&self, matrix: usize, gamma: usize, prop: f64) -> bool {
        let (r, c) = self.fractions[matrix][gamma];
        r > prop && c > prop
    }

    fn f1(&self, indices: &[usize], labels: &[bool], gamma: usize, prop: f64) -> f64 {
        let predicted: Vec<bool> = indices
            .iter()
            .map(|&i| self.predict(i, gamma, prop))
            .collect();
        let actual: Vec<bool> = indices.iter().map(|&i| labels[i]).collect();
        compute_metrics(&ConfusionMatrix::from_predictions(&predicted, &actual))
            .similar
            .f1
    }

    /// Grid point maximizing `score`; ties go to larger gamma, then larger
    /// prop (the grid is scanned in increasing order with `>=`).
    fn best(&self, props: &[f64], mut score: impl FnMut(usize, f64) -> f64) -> (DetectConfig, f64) {
        let mut best = (DetectConfig::default(), f64::NEG_INFINITY);
        for (g, &gamma) in self.gammas.iter().enumerate() {
            for &prop in props {
                let value = score(g, prop);
                if value >= best.1 {
                    best = (
                        DetectConfig {
                            gamma,
                            prop_threshold: prop,
                        },
                        value,
                    );
                }
            }
        }
        best
    }
}

/// Splits indices into `k` folds, stratified by label and shuffled by `seed`.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in [true, false] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    folds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub config: DetectConfig,
    /// Mean held-out similar-class F1 of `config`.
    pub mean_f1: f64,
    pub fold_f1: Vec<f64>,
}

fn check_inputs(
    matrices: &[SimilarityMatrix],
    labels: &[bool],
    k: usize,
) -> Result<(), DetectError> {
    if matrices.len() != labels.len() {
        return Err(DetectError::LengthMismatch(matrices.len(), labels.len()));
    }
    if k < 2 || k > labels.len() {
        return Err(DetectError::Config(format!(
            "k = {k} folds for {} pairs",
            labels.len()
        )));
    }
    if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        return Err(DetectError::SingleClass);
    }
    Ok(())
}

/// Grid search for the config with the best mean held-out F1 over `k`
/// stratified folds.
///
/// Every fold must contain both classes, except for leave-one-out
/// (`k == pairs`), where the F1 of the pooled held-out predictions is used.
pub fn kfold_threshold_cv(
    matrices: &[SimilarityMatrix],
    labels: &[bool],
    k: usize,
    seed: u64,
) -> Result<CvResult, DetectError> {
    check_inputs(matrices, labels, k)?;
    let folds = stratified_folds(labels, k, seed);
    let leave_one_out = k == labels.len();
    if !leave_one_out {
        for (f, fold) in folds.iter().enumerate() {
            if fold.iter().all(|&i| labels[i]) || fold.iter().all(|&i| !labels[i]) {
                return Err(DetectError::Fold(f));
            }
        }
    }
    let table = FractionTable::new(matrices, gamma_grid());
    let all: Vec<usize> = (0..labels.len()).collect();
    let fold_scores = |g: usize, prop: f64| -> Vec<f64> {
        folds
            .iter()
            .map(|fold| table.f1(fold, labels, g, prop))
            .collect()
    };
    let (config, _) = table.best(&prop_grid(), |g, prop| {
        if leave_one_out {
            table.f1(&all, labels, g, prop)
        } else {
            let scores = fold_scores(g, prop);
            scores.iter().sum::<f64>() / scores.len() as f64
        }
    });
    let g = table
        .gammas
        .iter()
        .position(|&v| v == config.gamma)
        .expect("grid gamma");
    let fold_f1 = fold_scores(g, config.prop_threshold);
    let mean_f1 = if leave_one_out {
        table.f1(&all, labels, g, config.prop_threshold)
    } else {
        fold_f1.iter().sum::<f64>() / k as f64
    };
    Ok(CvResult {
        config,
        mean_f1,
        fold_f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfFold {
    /// Held-out prediction for each pair.
    pub predicted: Vec<bool>,
    /// Config fitted on the other folds, per fold.
    pub fold_configs: Vec<DetectConfig>,
}

/// Nested evaluation: each fold is predicted with the config that maximizes
/// F1 on the remaining folds.
pub fn out_of_fold_predictions(
    matrices: &[SimilarityMatrix],
    labels: &[bool],
    k: usize,
    seed: u64,
) -> Result<OutOfFold, DetectError> {
    check_inputs(matrices, labels, k)?;
    let folds = stratified_folds(labels, k, seed);
    let table = FractionTable::new(matrices, gamma_grid());
    let mut predicted = vec![false; labels.len()];
    let mut fold_configs = Vec::with_capacity(k);
    for (f, fold) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(o, _)| o != f)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        let (config, _) = table.best(&prop_grid(), |g, prop| table.f1(&train, labels, g, prop));
        let g = table
            .gammas
            .iter()
            .position(|&v| v == config.gamma)
            .expect("grid gamma");
        for &i in fold {
            predicted[i] = table.predict(i, g, config.prop_threshold);
        }
        fold_configs.push(config);
    }
    Ok(OutOfFold {
        predicted,
        fold_configs,
    })
}

/// CSV with a header of column ids; each row starts with its row id.
pub fn write_matrix_csv(path: &Path, s: &SimilarityMatrix) -> Result<(), DetectError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![String::new()];
    header.extend(s.col_ids.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in s.row_ids.iter().enumerate() {
        let mut record = vec![id.clone()];
        record.extend(s.values.row(i).iter().map(|v| format!("{v:.6}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<SimilarityMatrix, DetectError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let col_ids: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    for record in r.records() {
        let record = record?;
        row_ids.push(record.get(0).unwrap_or_default().to_string());
        for field in record.iter().skip(1) {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|_| DetectError::Format(format!("bad value {field:?}")))?,
            );
        }
    }
    let values = Array2::from_shape_vec((row_ids.len(), col_ids.len()), values)
        .map_err(|e| DetectError::Format(e.to_string()))?;
    SimilarityMatrix::with_ids(row_ids, col_ids, values)
}

/// Binary 8-bit PGM; each matrix cell becomes a `cell` x `cell` block.
pub fn write_matrix_pgm(path: &Path, s: &SimilarityMatrix, cell: usize) -> Result<(), DetectError> {
    let cell = cell.max(1);
    let (rows, cols) = s.shape();
    let (width, height) = (cols * cell, rows * cell);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.reserve(width * height);
    for i in 0..rows {
        let line: Vec<u8> = (0..cols)
            .flat_map(|j| std::iter::repeat_n((s.values[[i, j]] * 255.0).round() as u8, cell))
            .collect();
        for _ in 0..cell {
            out.extend_from_slice(&line);
        }
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn write_verdict_json(path: &Path, verdict: &Verdict) -> Result<(), DetectError> {
    let mut text = serde_json::to_string_pretty(verdict)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn matrix(values: Array2<f64>) -> SimilarityMatrix {
        SimilarityMatrix::new(values).unwrap()
    }

    #[test]
    fn decision_examples() {
        let s = matrix(Array2::from_elem((1, 1), 0.995));
        assert_eq!(decision_matrix(&s, 0.99)[[0, 0]], 1);
        let low = matrix(Array2::from_elem((3, 2), 0.4));
        assert!(decision_matrix(&low, 0.5).iter().all(|&v| v == 0));
        let pos = matrix(Array2::from_elem((3, 2), 1e-6));
        assert!(decision_matrix(&pos, 1e-9).iter().all(|&v| v == 1));
    }

    #[test]
    fn verdict_examples() {
        let config = DetectConfig::new(0.99, 0.2).unwrap();
        let v = song_verdict(&Array2::ones((5, 5)), &config);
        assert!(v.similar);
        assert_eq!((v.row_fraction, v.col_fraction), (1.0, 1.0));

        let mut d = Array2::zeros((10, 10));
        d[[3, 7]] = 1;
        let v = song_verdict(&d, &config);
        assert_eq!((v.row_fraction, v.col_fraction), (0.1, 0.1));
        assert!(!v.similar);

        // Half of the rows but only three of ten columns are active.
        let mut d = Array2::zeros((10, 10));
        for i in 0..5 {
            d[[i, i % 3]] = 1;
        }
        let v = song_verdict(&d, &DetectConfig::default());
        assert_eq!((v.row_fraction, v.col_fraction), (0.5, 0.3));
        assert!(!v.similar);
    }

    #[test]
    fn config_validation() {
        assert!(DetectConfig::new(0.0, 0.4).is_err());
        assert!(DetectConfig::new(0.5, 1.0).is_err());
        assert!(DetectConfig::default().validate().is_ok());
        assert!(SimilarityMatrix::new(Array2::from_elem((1, 1), 1.5)).is_err());
        assert!(matches!(
            SimilarityMatrix::new(Array2::zeros((0, 3))),
            Err(DetectError::Empty)
        ));
    }

    #[test]
    fn table_two_reproduces_reported_metrics() {
        let segment = compute_metrics(&ConfusionMatrix {
            tp: 13555,
            fp: 17563,
            fn_: 81,
            tn: 319824,
        });
        assert!((segment.similar.precision - 0.44).abs() < 0.005);
        assert!((segment.similar.recall - 0.99).abs() < 0.005);
        assert!((segment.similar.f1 - 0.61).abs() < 0.005);
        assert!((segment.different.precision - 1.00).abs() < 0.005);
        assert!((segment.different.recall - 0.95).abs() < 0.005);
        assert!((segment.different.f1 - 0.97).abs() < 0.005);
        assert!((segment.weighted.precision - 0.98).abs() < 0.005);
        assert!((segment.weighted.recall - 0.95).abs() < 0.005);
        assert!((segment.weighted.f1 - 0.96).abs() < 0.005);

        let song = compute_metrics(&ConfusionMatrix {
            tp: 545,
            fp: 22,
            fn_: 1,
            tn: 524,
        });
        assert!((song.similar.precision - 0.96).abs() < 0.005);
        assert!((song.similar.recall - 1.00).abs() < 0.005);
        assert!((song.similar.f1 - 0.98).abs() < 0.005);
        assert!((song.different.recall - 0.96).abs() < 0.005);
        assert!((song.weighted.f1 - 0.98).abs() < 0.005);
    }

    #[test]
    fn degenerate_confusion_matrix() {
        let m = compute_metrics(&ConfusionMatrix {
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 1,
        });
        assert_eq!(
            m.similar,
            ClassMetrics {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
                support: 0
            }
        );
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
        assert_eq!(
            auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap(),
            0.5
        );
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(DetectError::SingleClass)
        ));
        // One inversion out of four positive-negative pairs.
        assert_eq!(
            auc(&[0.1, 0.6, 0.5, 0.9], &[false, false, true, true]).unwrap(),
            0.75
        );
    }

    #[test]
    fn auc_of_random_labels_is_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let scores: Vec<f64> = (0..1000).map(|_| rng.gen()).collect();
            let mut labels: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
            labels.shuffle(&mut rng);
            let a = auc(&scores, &labels).unwrap();
            assert!((a - 0.5).abs() < 0.05, "{a}");
        }
    }

    /// Pair `i` gets a band of `strength` on its diagonal and uniform noise
    /// below `noise` elsewhere.
    fn synthetic_pairs(n: usize, seed: u64) -> (Vec<SimilarityMatrix>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut matrices = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let similar = i % 2 == 0;
            let strength = if similar {
                rng.gen_range(0.75..1.0)
            } else {
                rng.gen_range(0.3..0.85)
            };
            let size = rng.gen_range(3..7);
            let values = Array2::from_shape_fn((size, size), |(r, c)| {
                if r == c && rng.gen_bool(0.8) {
                    strength
                } else {
                    rng.gen_range(0.0..0.6)
                }
            });
            matrices.push(matrix(values));
            labels.push(similar);
        }
        (matrices, labels)
    }

    #[test]
    fn separable_set_is_perfect_on_every_fold() {
        let mut matrices = Vec::new();
        let mut labels = Vec::new();
        for i in 0..12 {
            let similar = i % 3 == 0;
            let v = if similar { 0.97 } else { 0.2 };
            matrices.push(matrix(Array2::from_shape_fn((4, 4), |(r, c)| {
                if r == c {
                    v
                } else {
                    0.1
                }
            })));
            labels.push(similar);
        }
        let result = kfold_threshold_cv(&matrices, &labels, 4, 1).unwrap();
        assert!(result.fold_f1.iter().all(|&f| f == 1.0), "{result:?}");
        // Ties resolve towards the largest gamma and prop that still work.
        assert_eq!(result.config.gamma, 0.97);
        assert_eq!(result.config.prop_threshold, 0.9);
    }

    #[test]
    fn leave_one_out_runs() {
        let (matrices, labels) = synthetic_pairs(10, 3);
        let result = kfold_threshold_cv(&matrices, &labels, 10, 0).unwrap();
        assert_eq!(result.fold_f1.len(), 10);
    }

    #[test]
    fn fold_without_both_classes_is_an_error() {
        let (matrices, mut labels) = synthetic_pairs(6, 4);
        labels.iter_mut().enumerate().for_each(|(i, y)| *y = i == 0);
        assert!(matches!(
            kfold_threshold_cv(&matrices, &labels, 3, 0),
            Err(DetectError::Fold(_))
        ));
        assert!(kfold_threshold_cv(&matrices, &labels, 1, 0).is_err());
    }

    #[test]
    fn cv_choice_beats_every_grid_point() {
        let (matrices, labels) = synthetic_pairs(40, 5);
        let k = 5;
        let result = kfold_threshold_cv(&matrices, &labels, k, 9).unwrap();
        let folds = stratified_folds(&labels, k, 9);
        let mean_f1 = |config: &DetectConfig| {
            folds
                .iter()
                .map(|fold| {
                    let predicted: Vec<bool> = fold
                        .iter()
                        .map(|&i| detect(&matrices[i], config).similar)
                        .collect();
                    let actual: Vec<bool> = fold.iter().map(|&i| labels[i]).collect();
                    compute_metrics(&ConfusionMatrix::from_predictions(&predicted, &actual))
                        .similar
                        .f1
                })
                .sum::<f64>()
                / k as f64
        };
        let chosen = mean_f1(&result.config);
        assert!((chosen - result.mean_f1).abs() < 1e-12);
        for gamma in gamma_grid() {
            for prop in prop_grid() {
                let other = mean_f1(&DetectConfig {
                    gamma,
                    prop_threshold: prop,
                });
                assert!(
                    chosen >= other,
                    "({gamma}, {prop}) scores {other} > {chosen}"
                );
            }
        }
    }

    #[test]
    fn out_of_fold_predictions_cover_every_pair() {
        let (matrices, labels) = synthetic_pairs(20, 6);
        let oof = out_of_fold_predictions(&matrices, &labels, 4, 2).unwrap();
        assert_eq!(oof.predicted.len(), 20);
        assert_eq!(oof.fold_configs.len(), 4);
    }

    #[test]
    fn grids() {
        let g = gamma_grid();
        assert_eq!(g.len(), 18);
        assert_eq!((g[0], g[8], g[9], g[17]), (0.5, 0.9, 0.91, 0.99));
        let p = prop_grid();
        assert_eq!((p.len(), p[0], p[16]), (17, 0.1, 0.9));
    }

    #[test]
    fn stratified_folds_balance_classes() {
        let labels: Vec<bool> = (0..20).map(|i| i < 8).collect();
        let folds = stratified_folds(&labels, 4, 1);
        for fold in &folds {
            assert_eq!(fold.len(), 5);
            assert_eq!(fold.iter().filter(|&&i| labels[i]).count(), 2);
        }
    }

    #[test]
    fn exports_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = SimilarityMatrix::with_ids(
            vec!["a0".into(), "a1".into()],
            vec!["b0".into(), "b1".into(), "b2".into()],
            Array2::from_shape_vec((2, 3), vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125]).unwrap(),
        )
        .unwrap();
        let csv_path = dir.path().join("s.csv");
        write_matrix_csv(&csv_path, &s).unwrap();
        assert_eq!(read_matrix_csv(&csv_path).unwrap(), s);

        let pgm = dir.path().join("s.pgm");
        write_matrix_pgm(&pgm, &s, 2).unwrap();
        let bytes = std::fs::read(&pgm).unwrap();
        let header = b"P5\n6 4\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let pixels = &bytes[header.len()..];
        assert_eq!(pixels.len(), 24);
        assert_eq!((pixels[0], pixels[2], pixels[12 + 2]), (0, 64, 255));

        let json = dir.path().join("v.json");
        let verdict = detect(&s, &DetectConfig::default());
        write_verdict_json(&json, &verdict).unwrap();
        let back: Verdict = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(back, verdict);
    }

    fn small_matrix() -> impl Strategy<Value = Array2<f64>> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            proptest::collection::vec(0.0f64..=1.0, r * c)
                .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn decision_is_monotone_in_gamma(values in small_matrix(), g1 in 0.01f64..0.99, g2 in 0.01f64..0.99) {
            let s = matrix(values);
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            let (d_lo, d_hi) = (decision_matrix(&s, lo), decision_matrix(&s, hi));
            prop_assert!(d_lo.iter().zip(d_hi.iter()).all(|(a, b)| a >= b));
        }

        #[test]
        fn adding_a_one_never_clears_the_flag(values in small_matrix(), gamma in 0.1f64..0.9, prop in 0.05f64..0.95, pick in 0usize..36) {
            let s = matrix(values);
            let config = DetectConfig { gamma, prop_threshold: prop };
            let mut d = decision_matrix(&s, gamma);
            let before = song_verdict(&d, &config);
            let n = d.len();
            let cell = d.iter_mut().nth(pick % n).unwrap();
            *cell = 1;
            let after = song_verdict(&d, &config);
            prop_assert!(!before.similar || after.similar);
            prop_assert!((0.0..=1.0).contains(&after.row_fraction) && (0.0..=1.0).contains(&after.col_fraction));
        }

        #[test]
        fn auc_invariant_under_increasing_transform(scores in proptest::collection::vec(-5.0f64..5.0, 4..40), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut labels: Vec<bool> = (0..scores.len()).map(|i| i % 2 == 0).collect();
            labels.shuffle(&mut rng);
            let a = auc(&scores, &labels).unwrap();
            let transformed: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            prop_assert!((a - auc(&transformed, &labels).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
