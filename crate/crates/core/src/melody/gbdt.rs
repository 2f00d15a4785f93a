//! Histogram-based gradient boosted trees for binary classification.
//!
//! Features are bucketed into at most `bins` quantile bins per feature;
//! trees are grown depth-first with second-order (Newton) gains on the
//! logistic loss. Every fitted tree is shrunk until it does not increase
//! the training loss, so the loss sequence over rounds is non-increasing.

use serde::{Deserialize, Serialize};

use super::MelodyError;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub bins: usize,
    pub max_depth: usize,
    /// L2 regularization on leaf values.
    pub lambda: f64,
    pub min_samples_leaf: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            rounds: 100,
            learning_rate: 0.1,
            bins: 32,
            max_depth: 3,
            lambda: 1.0,
            min_samples_leaf: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        /// Samples with `x[feature] <= threshold` go left.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for node in &mut self.nodes {
            if let Node::Leaf { value } = node {
                *value *= factor;
            }
        }
    }
}

/// Boosted ensemble producing melody probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedClassifier {
    pub format_version: u32,
    pub n_features: usize,
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub config: BoostConfig,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mean logistic loss for labels in {0, 1} given raw margins.
pub fn logistic_loss(margins: &[f64], labels: &[f64]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| {
            // log(1 + e^m) - y m, computed stably
            let softplus = if m > 0.0 {
                m + (-m).exp().ln_1p()
            } else {
                m.exp().ln_1p()
            };
            softplus - y * m
        })
        .sum();
    total / margins.len().max(1) as f64
}

struct Binned {
    /// `edges[f]`: ascending thresholds; bin `b` holds values in `(edges[b-1], edges[b]]`.
    edges: Vec<Vec<f64>>,
    /// Row-major `n_samples x n_features` bin indices.
    bins: Vec<u16>,
    n_features: usize,
}

impl Binned {
    fn new(rows: &[Vec<f64>], max_bins: usize) -> Self {
        let n_features = rows[0].len();
        let mut edges = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let mut values: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            let e: Vec<f64> = if values.len() <= max_bins {
                values.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let mut e: Vec<f64> = (1..max_bins)
                    .map(|k| {
                        let pos = k * values.len() / max_bins;
                        0.5 * (values[pos - 1] + values[pos])
                    })
                    .collect();
                e.dedup();
                e
            };
            edges.push(e);
        }
        let mut bins = Vec::with_capacity(rows.len() * n_features);
        for row in rows {
            for (f, &x) in row.iter().enumerate() {
                bins.push(edges[f].partition_point(|&e| e < x) as u16);
            }
        }
        Binned {
            edges,
            bins,
            n_features,
        }
    }

    fn bin(&self, sample: usize, feature: usize) -> usize {
        self.bins[sample * self.n_features + feature] as usize
    }
}

struct SplitCandidate {
    gain: f64,
    feature: usize,
    bin: usize,
}

struct TreeBuilder<'a> {
    data: &'a Binned,
    grad: &'a [f64],
    hess: &'a [f64],
    config: &'a BoostConfig,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn leaf_value(&self, samples: &[usize]) -> f64 {
        let g: f64 = samples.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = samples.iter().map(|&i| self.hess[i]).sum();
        -g / (h + self.config.lambda) * self.config.learning_rate
    }

    fn best_split(&self, samples: &[usize]) -> Option<SplitCandidate> {
        let lambda = self.config.lambda;
        let g_total: f64 = samples.iter().map(|&i| self.grad[i]).sum();
        let h_total: f64 = samples.iter().map(|&i| self.hess[i]).sum();
        let parent = g_total * g_total / (h_total + lambda);
        let mut best: Option<SplitCandidate> = None;
        for f in 0..self.data.n_features {
            let n_bins = self.data.edges[f].len() + 1;
            if n_bins < 2 {
                continue;
            }
            let mut hist_g = vec![0.0; n_bins];
            let mut hist_h = vec![0.0; n_bins];
            let mut hist_n = vec![0usize; n_bins];
            for &i in samples {
                let b = self.data.bin(i, f);
                hist_g[b] += self.grad[i];
                hist_h[b] += self.hess[i];
                hist_n[b] += 1;
            }
            let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
            for b in 0..n_bins - 1 {
                gl += hist_g[b];
                hl += hist_h[b];
                nl += hist_n[b];
                let nr = samples.len() - nl;
                if nl < self.config.min_samples_leaf || nr < self.config.min_samples_leaf {
                    continue;
                }
                let gr = g_total - gl;
                let hr = h_total - hl;
                let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                if gain > 1e-12 && best.as_ref().is_none_or(|c| gain > c.gain) {
                    best = Some(SplitCandidate {
                        gain,
                        feature: f,
                        bin: b,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: 0.0 });
        let split = if depth < self.config.max_depth {
            self.best_split(&samples)
        } else {
            None
        };
        match split {
            None => {
                self.nodes[id] = Node::Leaf {
                    value: self.leaf_value(&samples),
                };
            }
            Some(c) => {
                let (left, right): (Vec<usize>, Vec<usize>) = samples
                    .iter()
                    .partition(|&&i| self.data.bin(i, c.feature) <= c.bin);
                let threshold = self.data.edges[c.feature][c.bin];
                let l = self.grow(left, depth + 1);
                let r = self.grow(right, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: c.feature,
                    threshold,
                    left: l,
                    right: r,
                };
            }
        }
        id
    }
}

/// Per-round training trace.
#[derive(Debug, Clone)]
pub struct BoostTrace {
    /// Training logistic loss after 0, 1, ..., rounds trees.
    pub losses: Vec<f64>,
}

impl BoostedClassifier {
    pub fn fit(
        rows: &[Vec<f64>],
        labels: &[bool],
        config: &BoostConfig,
    ) -> Result<(Self, BoostTrace), MelodyError> {
        if rows.len() != labels.len() || rows.is_empty() {
            return Err(MelodyError::Training(
                "rows and labels must be non-empty and aligned".into(),
            ));
        }
        let n_features = rows[0].len();
        if rows.iter().any(|r| r.len() != n_features) {
            return Err(MelodyError::Training("ragged feature rows".into()));
        }
        let positives = labels.iter().filter(|&&y| y).count();
        let negatives = labels.len() - positives;
        if positives < 2 || negatives < 2 {
            return Err(MelodyError::Training(format!(
                "need at least 2 examples per class (got {positives} positive, {negatives} negative)"
            )));
        }
        let y: Vec<f64> = labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let prior = positives as f64 / labels.len() as f64;
        let base_score = (prior / (1.0 - prior)).ln();
        let binned = Binned::new(rows, config.bins.clamp(2, u16::MAX as usize));

        let mut margins = vec![base_score; rows.len()];
        let mut losses = vec![logistic_loss(&margins, &y)];
        let mut trees = Vec::with_capacity(config.rounds);
        for _ in 0..config.rounds {
            let p: Vec<f64> = margins.iter().map(|&m| sigmoid(m)).collect();
            let grad: Vec<f64> = p.iter().zip(&y).map(|(p, y)| p - y).collect();
            let hess: Vec<f64> = p.iter().map(|p| (p * (1.0 - p)).max(1e-12)).collect();
            let mut builder = TreeBuilder {
                data: &binned,
                grad: &grad,
                hess: &hess,
                config,
                nodes: Vec::new(),
            };
            builder.grow((0..rows.len()).collect(), 0);
            let mut tree = Tree {
                nodes: builder.nodes,
            };
            let current = *losses.last().unwrap();
            let mut updates: Vec<f64> = rows.iter().map(|r| tree.predict(r)).collect();
            let mut candidate: Vec<f64> =
                margins.iter().zip(&updates).map(|(m, u)| m + u).collect();
            let mut loss = logistic_loss(&candidate, &y);
            // backtrack until the round does not increase training loss
            let mut halvings = 0;
            while loss > current && halvings < 30 {
                tree.scale(0.5);
                updates.iter_mut().for_each(|u| *u *= 0.5);
                candidate = margins.iter().zip(&updates).map(|(m, u)| m + u).collect();
                loss = logistic_loss(&candidate, &y);
                halvings += 1;
            }
            if loss > current {
                tree.scale(0.0);
                loss = current;
            } else {
                margins = candidate;
            }
            losses.push(loss);
            trees.push(tree);
        }
        Ok((
            BoostedClassifier {
                format_version: MODEL_FORMAT_VERSION,
                n_features,
                base_score,
                trees,
                config: config.clone(),
            },
            BoostTrace { losses },
        ))
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Probability of the positive class.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }

    pub fn to_json(&self) -> Result<String, MelodyError> {
        serde_json::to_string_pretty(self).map_err(|e| MelodyError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, MelodyError> {
        let model: BoostedClassifier =
            serde_json::from_str(text).map_err(|e| MelodyError::Format(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(MelodyError::Format(format!(
                "unsupported classifier format version {}",
                model.format_version
            )));
        }
        Ok(model)
    }
}
