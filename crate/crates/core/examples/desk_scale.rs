//! Desk-scale run: synthetic corpus, augmentation, training and evaluation
//! on held-out pieces against a chroma DTW baseline.
//!
//! Usage: `cargo run --release --example desk_scale -- [work_dir] [epochs] [train] [test] [seed]`

use std::time::Instant;

use melodysim::augment::EnsembleTable;
use melodysim::corpus::{generate_corpus, CorpusConfig};
use melodysim::embedder::{InputConfig, TrainConfig, Trainer};
use melodysim::features::FeatureKind;
use melodysim::pipeline::{
    augment_corpus, build_eval_pairs, build_feature_store, evaluate, format_report, train_corpus,
    StoreConfig,
};

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = args
        .first()
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("melodysim-desk"));
    let epochs = arg(&args, 1, 200usize);
    let n_train = arg(&args, 2, 20usize);
    let n_test = arg(&args, 3, 5usize);
    let seed = arg(&args, 4, 1u64);
    let start = Instant::now();

    let pieces: Vec<_> = generate_corpus(2024, n_train + n_test, &CorpusConfig::default())
        .into_iter()
        .enumerate()
        .map(|(i, p)| (format!("piece{i:02}.mid"), p))
        .collect();
    let (manifest, _) = augment_corpus(&pieces, &dir, 7, 3, &EnsembleTable::general_midi(), None)?;
    let config = StoreConfig::default();
    let (corpus, stats) = build_feature_store(&manifest, &dir, &dir.join("cache"), &config)?;
    println!(
        "features ready in {:.1}s ({} segments computed, {} from cache)",
        start.elapsed().as_secs_f64(),
        stats.computed,
        stats.cache_hits
    );

    let ids: Vec<String> = manifest.tracks.iter().map(|t| t.id.clone()).collect();
    let mut train_set = corpus.clone();
    train_set.tracks.retain(|t| ids[..n_train].contains(&t.id));
    let mut test_set = corpus;
    test_set.tracks.retain(|t| ids[n_train..].contains(&t.id));

    let train_config = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(train_config, InputConfig::default())?;
    let outcome = train_corpus(&train_set, trainer, config.window_seconds, |e| {
        if e.epoch % 50 == 0 {
            println!(
                "epoch {:>3}  triplet {:.4}  bce {:.4}",
                e.epoch, e.triplet, e.bce
            );
        }
    })?;

    let pairs = build_eval_pairs(&test_set.tracks, seed)?;
    let report = evaluate(
        &outcome.trainer.model,
        &test_set,
        &pairs,
        5,
        seed,
        config.window_seconds,
        Some(FeatureKind::Chroma),
    )?;
    println!("{}", format_report(&report));
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
