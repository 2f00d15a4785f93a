//! Dynamic time warping between feature sequences and the adaptive
//! threshold used by the DTW baselines.

use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureSequence;

#[derive(Debug, Error)]
pub enum DtwError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("empty sequence")]
    Empty,
    #[error("threshold fitting needs both classes")]
    SingleClass,
    #[error("{0} scores but {1} labels")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwResult {
    pub total_cost: f64,
    pub path_length: usize,
    /// `total_cost / (len_a + len_b)`.
    pub normalized_cost: f64,
}

fn euclidean(a: ndarray::ArrayView1<f32>, b: ndarray::ArrayView1<f32>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub fn dtw_distance(a: &FeatureSequence, b: &FeatureSequence) -> Result<DtwResult, DtwError> {
    dtw_frames(a.frames.view(), b.frames.view())
}

/// Full-matrix DTW with steps (1,0), (0,1), (1,1) and Euclidean frame cost.
pub fn dtw_frames(a: ArrayView2<f32>, b: ArrayView2<f32>) -> Result<DtwResult, DtwError> {
    if a.ncols() != b.ncols() {
        return Err(DtwError::DimMismatch(a.ncols(), b.ncols()));
    }
    let (n, m) = (a.nrows(), b.nrows());
    if n == 0 || m == 0 {
        return Err(DtwError::Empty);
    }
    // Rolling rows of (cost, path length).
    let mut prev = vec![(f64::INFINITY, 0usize); m];
    let mut cur = vec![(f64::INFINITY, 0usize); m];
    for i in 0..n {
        for j in 0..m {
            let c = euclidean(a.row(i), b.row(j));
            let best = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut best = (f64::INFINITY, 0);
                if i > 0 && j > 0 {
                    best = prev[j - 1];
                }
                if i > 0 && prev[j].0 < best.0 {
                    best = prev[j];
                }
                if j > 0 && cur[j - 1].0 < best.0 {
                    best = cur[j - 1];
                }
                best
            };
            cur[j] = (best.0 + c, best.1 + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (total_cost, path_length) = prev[m - 1];
    Ok(DtwResult {
        total_cost,
        path_length,
        normalized_cost: total_cost / (n + m) as f64,
    })
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// F1 of the similar class when predicting similar iff `score < threshold`.
pub fn f1_at(scores: &[f64], similar: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&s, &y) in scores.iter().zip(similar) {
        match (s < threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    f1(tp, fp, fn_)
}

/// Chooses the cost threshold maximizing F1 of the similar class.
///
/// Candidates are the midpoints between consecutive distinct sorted scores
/// plus one value above the maximum (everything similar). Ties go to the
/// smallest threshold.
pub fn fit_threshold(scores: &[f64], similar: &[bool]) -> Result<f64, DtwError> {
    if scores.len() != similar.len() {
        return Err(DtwError::LengthMismatch(scores.len(), similar.len()));
    }
    let positives = similar.iter().filter(|&&y| y).count();
    if positives == 0 || positives == similar.len() {
        return Err(DtwError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    let mut k = 0;
    while k < order.len() {
        let value = scores[order[k]];
        while k < order.len() && scores[order[k]] == value {
            if similar[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let threshold = match order.get(k) {
            Some(&next) => 0.5 * (value + scores[next]),
            None => value + 1.0,
        };
        let score = f1(tp, fp, positives - tp);
        if score > best.0 {
            best = (score, threshold);
        }
    }
    Ok(best.1)
}

/// One row of the pairwise score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id_a: String,
    pub id_b: String,
    pub normalized_cost: f64,
    pub label: bool,
}

pub fn write_score_table(path: &Path, rows: &[ScoreRow]) -> Result<(), DtwError> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_score_table(path: &Path) -> Result<Vec<ScoreRow>, DtwError> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<Result<_, _>>()?)
}
