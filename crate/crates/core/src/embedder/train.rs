use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{sigmoid, softplus};
use super::{EmbedError, FeatureStore, InputConfig, SimilarityModel, Triplet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub triplet_weight: f64,
    pub bce_weight: f64,
    /// Triplets anchored on each track per epoch.
    pub revisits: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 1.0,
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size: 32,
            epochs: 200,
            seed: 0,
            triplet_weight: 1.0,
            bce_weight: 1.0,
            revisits: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |m: &str| Err(EmbedError::Config(m.to_string()));
        if self.margin <= 0.0 {
            return bad("margin must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// Which loss terms contribute, and whether the head's gradient reaches
/// the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradMode {
    pub triplet: bool,
    pub bce: bool,
    pub stop_gradient: bool,
}

impl GradMode {
    pub const TRAIN: GradMode = GradMode {
        triplet: true,
        bce: true,
        stop_gradient: true,
    };
    /// Gradient of the summed loss as a plain function of all parameters.
    pub const FULL: GradMode = GradMode {
        triplet: true,
        bce: true,
        stop_gradient: false,
    };
    pub const BCE_ONLY: GradMode = GradMode {
        triplet: false,
        bce: true,
        stop_gradient: true,
    };
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub triplet: f64,
    pub bce: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.triplet + self.bce
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<f64>,
    pub head: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct TripletInput<'a> {
    pub anchor: ArrayView2<'a, f32>,
    pub positive: ArrayView2<'a, f32>,
    pub negative: ArrayView2<'a, f32>,
}

struct Forward {
    emb: Array2<f64>,
    enc_cache: super::net::EncoderCache,
}

fn encode(model: &SimilarityModel, batch: &[TripletInput]) -> Forward {
    let mut seqs = Vec::with_capacity(3 * batch.len());
    seqs.extend(batch.iter().map(|t| t.anchor));
    seqs.extend(batch.iter().map(|t| t.positive));
    seqs.extend(batch.iter().map(|t| t.negative));
    let (emb, enc_cache) = model.encoder.forward(&seqs);
    Forward { emb, enc_cache }
}

/// Weighted mean losses over the batch.
pub fn batch_loss(
    model: &SimilarityModel,
    batch: &[TripletInput],
    config: &TrainConfig,
    mode: GradMode,
) -> LossParts {
    batch_gradients_impl(model, batch, config, mode, false).0
}

/// Losses and parameter gradients for one batch.
pub fn batch_gradients(
    model: &SimilarityModel,
    batch: &[TripletInput],
    config: &TrainConfig,
    mode: GradMode,
) -> (LossParts, Gradients) {
    let (loss, grads) = batch_gradients_impl(model, batch, config, mode, true);
    (loss, grads.expect("gradients requested"))
}

fn batch_gradients_impl(
    model: &SimilarityModel,
    batch: &[TripletInput],
    config: &TrainConfig,
    mode: GradMode,
    want_grad: bool,
) -> (LossParts, Option<Gradients>) {
    let b = batch.len();
    let dim = model.encoder.output_dim();
    let fwd = encode(model, batch);
    let emb = &fwd.emb;
    let scale = 1.0 / b as f64;
    let mut loss = LossParts::default();
    let mut d_emb = Array2::<f64>::zeros(emb.raw_dim());

    if mode.triplet {
        for i in 0..b {
            let (xa, xp, xn) = (emb.row(i), emb.row(b + i), emb.row(2 * b + i));
            let dap = &xa - &xp;
            let dan = &xa - &xn;
            let (nap, nan) = (dap.dot(&dap).sqrt(), dan.dot(&dan).sqrt());
            let value = nap - nan + config.margin;
            if value > 0.0 {
                loss.triplet += config.triplet_weight * scale * value;
                let w = config.triplet_weight * scale;
                let gp = if nap > 1e-12 {
                    dap.mapv(|v| v / nap)
                } else {
                    Array1::zeros(dim)
                };
                let gn = if nan > 1e-12 {
                    dan.mapv(|v| v / nan)
                } else {
                    Array1::zeros(dim)
                };
                let mut ra = d_emb.row_mut(i);
                ra.scaled_add(w, &gp);
                ra.scaled_add(-w, &gn);
                d_emb.row_mut(b + i).scaled_add(-w, &gp);
                d_emb.row_mut(2 * b + i).scaled_add(w, &gn);
            } else if value.is_nan() {
                loss.triplet = f64::NAN;
            }
        }
    }

    let mut head_grad = vec![0.0; model.head.params.len()];
    if mode.bce {
        // Rows 0..b are (anchor, positive) with target 1, rows b..2b are
        // (anchor, negative) with target 0.
        let mut diff = Array2::<f64>::zeros((2 * b, dim));
        for i in 0..b {
            diff.row_mut(i).assign(&(&emb.row(i) - &emb.row(b + i)));
            diff.row_mut(b + i)
                .assign(&(&emb.row(i) - &emb.row(2 * b + i)));
        }
        let input = diff.mapv(f64::abs);
        let (logits, head_cache) = model.head.forward(&input);
        let w = config.bce_weight * scale;
        let mut d_logits = Array1::<f64>::zeros(2 * b);
        for i in 0..b {
            let (zs, zd) = (logits[i], logits[b + i]);
            loss.bce += w * (softplus(-zs) + softplus(zd));
            d_logits[i] = w * (sigmoid(zs) - 1.0);
            d_logits[b + i] = w * sigmoid(zd);
        }
        if want_grad {
            let (g, d_input) = model.head.backward(&head_cache, &d_logits);
            head_grad = g;
            if !mode.stop_gradient {
                let d_diff = d_input * diff.mapv(f64::signum);
                for i in 0..b {
                    let (same, other) = (d_diff.row(i), d_diff.row(b + i));
                    d_emb.row_mut(i).scaled_add(1.0, &same);
                    d_emb.row_mut(i).scaled_add(1.0, &other);
                    d_emb.row_mut(b + i).scaled_add(-1.0, &same);
                    d_emb.row_mut(2 * b + i).scaled_add(-1.0, &other);
                }
            }
        }
    }

    if !want_grad {
        return (loss, None);
    }
    let encoder = if d_emb.iter().any(|&v| v != 0.0) {
        model.encoder.backward(&fwd.enc_cache, &d_emb)
    } else {
        vec![0.0; model.encoder.params.len()]
    };
    (
        loss,
        Some(Gradients {
            encoder,
            head: head_grad,
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub triplet: f64,
    pub bce: f64,
}

/// Model plus optimizer state; SGD with momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: SimilarityModel,
    pub config: TrainConfig,
    pub velocity_encoder: Vec<f64>,
    pub velocity_head: Vec<f64>,
    pub epochs_done: usize,
    pub history: Vec<EpochLoss>,
}

impl Trainer {
    pub fn new(config: TrainConfig, input: InputConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        let model = SimilarityModel::new(config.seed, input);
        Ok(Self::from_model(model, config))
    }

    pub fn from_model(model: SimilarityModel, config: TrainConfig) -> Self {
        Trainer {
            velocity_encoder: vec![0.0; model.encoder.params.len()],
            velocity_head: vec![0.0; model.head.params.len()],
            model,
            config,
            epochs_done: 0,
            history: Vec::new(),
        }
    }

    /// One optimizer step; returns the batch losses before the update.
    pub fn step(&mut self, batch: &[TripletInput], mode: GradMode) -> LossParts {
        let (loss, grads) = batch_gradients(&self.model, batch, &self.config, mode);
        let (lr, mu) = (self.config.learning_rate, self.config.momentum);
        let update = |params: &mut [f64], velocity: &mut [f64], grad: &[f64]| {
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
                *v = mu * *v - lr * g;
                *p += *v;
            }
        };
        if mode.triplet || !mode.stop_gradient {
            update(
                &mut self.model.encoder.params,
                &mut self.velocity_encoder,
                &grads.encoder,
            );
        }
        update(
            &mut self.model.head.params,
            &mut self.velocity_head,
            &grads.head,
        );
        loss
    }

    /// Shuffles `triplets` deterministically and runs one pass in batches.
    pub fn run_epoch(
        &mut self,
        triplets: &[Triplet],
        store: &FeatureStore,
    ) -> Result<EpochLoss, EmbedError> {
        if triplets.is_empty() {
            return Err(EmbedError::NoTriplets);
        }
        let epoch = self.epochs_done;
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let fetch = |s: &super::SegmentRef| {
            store
                .get(s)
                .ok_or_else(|| EmbedError::MissingSegment(s.clone()))
        };
        let mut sum = LossParts::default();
        for chunk in order.chunks(self.config.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let t = &triplets[i];
                batch.push(TripletInput {
                    anchor: fetch(&t.anchor)?.frames.view(),
                    positive: fetch(&t.positive)?.frames.view(),
                    negative: fetch(&t.negative)?.frames.view(),
                });
            }
            let loss = self.step(&batch, GradMode::TRAIN);
            if !loss.triplet.is_finite() || !loss.bce.is_finite() {
                return Err(EmbedError::Diverged {
                    epoch,
                    triplet: loss.triplet,
                    bce: loss.bce,
                });
            }
            let n = chunk.len() as f64;
            sum.triplet += loss.triplet * n;
            sum.bce += loss.bce * n;
        }
        let n = triplets.len() as f64;
        let record = EpochLoss {
            epoch,
            triplet: sum.triplet / n,
            bce: sum.bce / n,
        };
        self.epochs_done += 1;
        self.history.push(record);
        Ok(record)
    }
}

/// Trains on a fixed triplet list for `config.epochs` epochs.
pub fn train(
    triplets: &[Triplet],
    store: &FeatureStore,
    config: &TrainConfig,
    input: InputConfig,
) -> Result<(SimilarityModel, Vec<EpochLoss>), EmbedError> {
    if triplets.is_empty() {
        return Err(EmbedError::NoTriplets);
    }
    let mut trainer = Trainer::new(config.clone(), input)?;
    for _ in 0..config.epochs {
        trainer.run_epoch(triplets, store)?;
    }
    Ok((trainer.model, trainer.history))
}
