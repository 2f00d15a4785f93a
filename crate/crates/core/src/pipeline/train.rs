use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::store::CorpusFeatures;
use super::PipelineError;
use crate::embedder::{build_triplets, EpochLoss, Trainer};

const TRIPLET_SALT: u64 = 0x7472_6970_6c65_7473;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub epochs_run: usize,
}

/// Continues `trainer` until it has completed `trainer.config.epochs`
/// epochs, drawing a fresh set of triplets each epoch. Epoch numbering
/// carries on from a resumed trainer.
pub fn train_corpus(
    corpus: &CorpusFeatures,
    mut trainer: Trainer,
    window_seconds: f64,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome, PipelineError> {
    let usable = corpus
        .tracks
        .iter()
        .filter(|t| t.versions.iter().any(|v| v.segments > 0))
        .count();
    if usable < 2 {
        return Err(PipelineError::Invalid(format!(
            "training needs at least two tracks with audio, found {usable}"
        )));
    }
    let store = corpus.input_store();
    let mut epochs_run = 0;
    while trainer.epochs_done < trainer.config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(trainer.config.seed ^ TRIPLET_SALT);
        rng.set_stream(trainer.epochs_done as u64);
        let triplets = build_triplets(
            &corpus.tracks,
            trainer.config.revisits,
            window_seconds,
            &mut rng,
        );
        if triplets.is_empty() {
            return Err(PipelineError::Invalid(
                "no triplets could be formed; every track needs two versions".into(),
            ));
        }
        let loss = trainer.run_epoch(&triplets, &store)?;
        on_epoch(&loss);
        epochs_run += 1;
    }
    Ok(TrainOutcome {
        trainer,
        epochs_run,
    })
}

/// `epoch,triplet,bce` per line.
pub fn write_loss_csv(path: &Path, history: &[EpochLoss]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in history {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
