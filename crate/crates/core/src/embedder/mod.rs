//! Melody-aware segment embeddings.
//!
//! An [`EncoderNet`] maps a stacked feature sequence to a 64-d vector by
//! time-averaging residual conv features. Training combines the triplet loss
//!
//! ```text
//! L_triplet = max(d(x_anc, x_pos) - d(x_anc, x_neg) + margin, 0)
//! ```
//!
//! with a binary cross-entropy on a [`PairClassifierHead`] that scores
//! `|x_a - x_b|`. The head's gradient stops at its input, so only the
//! triplet loss shapes the encoder.

mod checkpoint;
mod input;
mod net;
mod train;
mod triplets;

use std::collections::HashMap;

use ndarray::{Array1, ArrayView1};
use thiserror::Error;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, sidecar_path, CheckpointMeta, CHECKPOINT_VERSION,
};
pub use input::{encoder_input, key_signature_shift, InputConfig};
pub use net::{
    sigmoid, softplus, EncoderCache, EncoderNet, HeadCache, PairClassifierHead, BLOCKS,
    HEAD_HIDDEN, HIDDEN, INPUT_DIM, KERNEL,
};
pub use train::{
    batch_gradients, batch_loss, train, EpochLoss, GradMode, Gradients, LossParts, TrainConfig,
    Trainer, TripletInput,
};
pub use triplets::{
    aligned_segment, build_triplets, read_triplet_manifest, write_triplet_manifest, SegmentRef,
    TrackInfo, Triplet, VersionInfo,
};

use crate::features::{FeatureSequence, FeaturesError};

pub type EmbeddingVector = Array1<f64>;

/// Encoder-ready (stacked) features keyed by segment.
pub type FeatureStore = HashMap<SegmentRef, FeatureSequence>;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("input dimension {got} does not match the encoder's {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("invalid input: {0}")]
    Input(String),
    #[error("no triplets to train on")]
    NoTriplets,
    #[error("segment {0} missing from the feature store")]
    MissingSegment(SegmentRef),
    #[error("training diverged at epoch {epoch}: triplet loss {triplet}, bce loss {bce}")]
    Diverged {
        epoch: usize,
        triplet: f64,
        bce: f64,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Features(#[from] FeaturesError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Trained encoder and head plus the input recipe they expect.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityModel {
    pub encoder: EncoderNet,
    pub head: PairClassifierHead,
    pub input: InputConfig,
}

impl SimilarityModel {
    pub fn new(seed: u64, input: InputConfig) -> Self {
        SimilarityModel {
            encoder: EncoderNet::default_shape(seed),
            head: PairClassifierHead::default_shape(seed.wrapping_add(1)),
            input,
        }
    }

    pub fn embed(&self, seq: &FeatureSequence) -> Result<EmbeddingVector, EmbedError> {
        embed(&self.encoder, seq)
    }

    pub fn score(&self, xa: &EmbeddingVector, xb: &EmbeddingVector) -> f64 {
        classify_pair(&self.head, xa.view(), xb.view())
    }
}

pub fn embed(net: &EncoderNet, seq: &FeatureSequence) -> Result<EmbeddingVector, EmbedError> {
    if seq.dim() != net.input_dim {
        return Err(EmbedError::DimMismatch {
            expected: net.input_dim,
            got: seq.dim(),
        });
    }
    if seq.is_empty() {
        return Err(EmbedError::EmptyInput);
    }
    Ok(net.embed_one(seq.frames.view()))
}

pub fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn triplet_loss(
    xa: ArrayView1<f64>,
    xp: ArrayView1<f64>,
    xn: ArrayView1<f64>,
    margin: f64,
) -> f64 {
    (euclidean(xa, xp) - euclidean(xa, xn) + margin).max(0.0)
}

/// Similarity score in (0, 1); symmetric in its arguments.
pub fn classify_pair(head: &PairClassifierHead, xa: ArrayView1<f64>, xb: ArrayView1<f64>) -> f64 {
    head.score(xa, xb)
}

/// Cross-entropy with target 1 for `y_same` and target 0 for `y_diff`.
pub fn bce_pair_loss(y_same: f64, y_diff: f64) -> f64 {
    -y_same.ln() - (1.0 - y_diff).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use ndarray::{arr1, Array2};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn triplet_loss_examples() {
        let xa = arr1(&[0.0, 0.0]);
        assert_eq!(
            triplet_loss(
                xa.view(),
                arr1(&[0.5, 0.0]).view(),
                arr1(&[2.0, 0.0]).view(),
                1.0
            ),
            0.0
        );
        let l = triplet_loss(
            xa.view(),
            arr1(&[0.0, 1.0]).view(),
            arr1(&[1.2, 0.0]).view(),
            1.0,
        );
        assert!((l - 0.8).abs() < 1e-12);
        let same = arr1(&[0.3, -0.7]);
        assert_eq!(triplet_loss(xa.view(), same.view(), same.view(), 1.0), 1.0);
    }

    #[test]
    fn bce_examples() {
        assert!((bce_pair_loss(0.5, 0.5) - 4f64.ln()).abs() < 1e-12);
        assert!((bce_pair_loss(0.5, 0.5) - 1.3863).abs() < 5e-5);
        assert!(bce_pair_loss(1.0 - 1e-12, 1e-12) < 1e-10);
        assert!(bce_pair_loss(0.6, 0.3) < bce_pair_loss(0.5, 0.3));
        assert!(bce_pair_loss(0.6, 0.4) > bce_pair_loss(0.6, 0.3));
    }

    #[test]
    fn classify_pair_is_symmetric() {
        let head = PairClassifierHead::default_shape(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let a = Array1::from_shape_fn(64, |_| rng.gen_range(-2.0..2.0));
            let b = Array1::from_shape_fn(64, |_| rng.gen_range(-2.0..2.0));
            let s = classify_pair(&head, a.view(), b.view());
            assert_eq!(s, classify_pair(&head, b.view(), a.view()));
            assert!(s > 0.0 && s < 1.0);
        }
        let a = Array1::from_elem(64, 0.4);
        let b = Array1::from_elem(64, -1.0);
        assert_eq!(
            classify_pair(&head, a.view(), a.view()),
            classify_pair(&head, b.view(), b.view())
        );
    }

    fn stacked(frames: Array2<f32>) -> FeatureSequence {
        FeatureSequence::new(FeatureKind::Stacked, 3.125, frames)
    }

    #[test]
    fn constant_input_pools_independently_of_length() {
        let net = EncoderNet::default_shape(4);
        let row: Vec<f32> = (0..INPUT_DIM).map(|i| (i as f32 * 0.37).sin()).collect();
        let make = |n| stacked(Array2::from_shape_fn((n, INPUT_DIM), |(_, j)| row[j]));
        let short = embed(&net, &make(5)).unwrap();
        let long = embed(&net, &make(50)).unwrap();
        for (a, b) in short.iter().zip(long.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_is_deterministic_and_discriminative() {
        let net = EncoderNet::default_shape(5);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let mut random = || {
            stacked(Array2::from_shape_fn((32, INPUT_DIM), |_| {
                rng.gen_range(0.0f32..1.0)
            }))
        };
        let x = random();
        assert_eq!(embed(&net, &x).unwrap(), embed(&net, &x).unwrap());
        for _ in 0..100 {
            let (a, b) = (random(), random());
            assert_ne!(embed(&net, &a).unwrap(), embed(&net, &b).unwrap());
        }
    }

    #[test]
    fn embed_rejects_wrong_dim() {
        let net = EncoderNet::default_shape(5);
        let bad = stacked(Array2::zeros((4, 12)));
        assert!(matches!(
            embed(&net, &bad),
            Err(EmbedError::DimMismatch { .. })
        ));
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, 3)
    }

    proptest! {
        #[test]
        fn margin_satisfied_means_zero_loss(a in vec3(), p in vec3(), n in vec3(), margin in 0.1f64..2.0) {
            let (a, p, n) = (Array1::from(a), Array1::from(p), Array1::from(n));
            let l = triplet_loss(a.view(), p.view(), n.view(), margin);
            prop_assert!(l >= 0.0);
            if euclidean(a.view(), n.view()) >= euclidean(a.view(), p.view()) + margin {
                prop_assert_eq!(l, 0.0);
            }
        }

        #[test]
        fn triplet_loss_rotation_invariant(a in vec3(), p in vec3(), n in vec3(), theta in 0.0f64..6.3) {
            let rot = |v: &Vec<f64>| Array1::from(vec![
                v[0] * theta.cos() - v[1] * theta.sin(),
                v[0] * theta.sin() + v[1] * theta.cos(),
                v[2],
            ]);
            let before = triplet_loss(Array1::from(a.clone()).view(), Array1::from(p.clone()).view(), Array1::from(n.clone()).view(), 1.0);
            let after = triplet_loss(rot(&a).view(), rot(&p).view(), rot(&n).view(), 1.0);
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
