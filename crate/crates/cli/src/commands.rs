//! Implementations of the subcommands.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use melodysim::augment::EnsembleTable;
use melodysim::corpus::{generate_corpus, CorpusConfig};
use melodysim::detect::DetectConfig;
use melodysim::embedder::{load_checkpoint, save_checkpoint, InputConfig, Trainer};
use melodysim::melody::{
    extract_track_features, labeled_examples, predict_melody_track, read_label_manifest,
    train_melody_classifier, BoostConfig, MelodyClassifier, TrackFeatureVector,
};
use melodysim::midi::{parse_midi, write_midi, MidiPiece};
use melodysim::pipeline::{
    augment_directory, build_eval_pairs, build_feature_store, compare_files,
    evaluate as run_evaluation, format_report, train_corpus, write_loss_csv, CorpusFeatures,
    CorpusManifest, PipelineError, ProjectConfig,
};

use crate::{
    AugmentArgs, CacheArgs, CompareArgs, EvaluateArgs, RenderArgs, SynthArgs, TrainArgs,
    TrainMelodyArgs,
};

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write;
        writeln!(std::io::stdout().lock(), $($arg)*)?
    }};
}

fn invalid(message: impl Into<String>) -> anyhow::Error {
    PipelineError::Invalid(message.into()).into()
}

fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{}: no such file or directory",
            path.display()
        )))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Loads a corpus manifest and its features, rendering what is missing.
fn load_corpus(
    corpus: &Path,
    cache: &CacheArgs,
    input: InputConfig,
) -> Result<(CorpusManifest, CorpusFeatures)> {
    require_exists(corpus)?;
    let (manifest, root) = CorpusManifest::load(corpus)?;
    let mut project = ProjectConfig::new(&root);
    if let Some(cache) = &cache.cache {
        project.cache_root = cache.clone();
    }
    project.input = input;
    project.validate()?;
    let (features, stats) = build_feature_store(
        &manifest,
        &root,
        &project.cache_root,
        &project.store_config(),
    )?;
    log::info!(
        "features: {} rendered, {} computed, {} cached, {} recovered",
        stats.rendered,
        stats.computed,
        stats.cache_hits,
        stats.recovered
    );
    for (item, reason) in &stats.failures {
        eprintln!("warning: {item}: {reason}");
    }
    Ok((manifest, features))
}

pub fn synth(args: SynthArgs) -> Result<()> {
    if args.count == 0 || args.bars == 0 {
        return Err(invalid("count and bars must be positive"));
    }
    let config = CorpusConfig {
        bars: args.bars,
        ..CorpusConfig::default()
    };
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    for (i, piece) in generate_corpus(args.seed, args.count, &config)
        .iter()
        .enumerate()
    {
        let path = args.out.join(format!("piece{i:03}.mid"));
        std::fs::write(&path, write_midi(piece)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    say!("wrote {} pieces to {}", args.count, args.out.display());
    Ok(())
}

pub fn augment(args: AugmentArgs) -> Result<()> {
    require_exists(&args.input)?;
    if args.versions == 0 {
        return Err(invalid("--versions must be at least 1"));
    }
    let melody = match &args.melody_model {
        Some(path) => {
            require_exists(path)?;
            Some(
                MelodyClassifier::load(path)
                    .with_context(|| format!("loading {}", path.display()))?,
            )
        }
        None => None,
    };
    let (manifest, summary) = augment_directory(
        &args.input,
        &args.out,
        args.seed,
        args.versions,
        &EnsembleTable::general_midi(),
        melody.as_ref(),
    )?;
    for (file, reason) in &summary.skipped {
        eprintln!("skipped {file}: {reason}");
    }
    say!(
        "{} tracks, {} MIDI files and {} augmentation records written; manifest at {}",
        manifest.tracks.len(),
        summary.midi_written,
        summary.records_written,
        args.out.join(melodysim::pipeline::MANIFEST_FILE).display()
    );
    Ok(())
}

pub fn render(args: RenderArgs) -> Result<()> {
    let (manifest, features) = load_corpus(&args.corpus, &args.cache, InputConfig::default())?;
    let versions: usize = manifest.tracks.iter().map(|t| t.versions.len()).sum();
    say!(
        "{} tracks, {versions} versions, {} segments with features",
        manifest.tracks.len(),
        features.segments.len()
    );
    let failed: usize = manifest
        .tracks
        .iter()
        .flat_map(|t| t.versions.iter().map(move |v| (t, v)))
        .filter(|(t, v)| features.segment_count(&t.id, &v.id) == 0)
        .count();
    if failed > 0 {
        anyhow::bail!("{failed} of {versions} versions could not be rendered");
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut trainer = match &args.resume {
        Some(path) => {
            require_exists(path)?;
            load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => Trainer::new(Default::default(), InputConfig::default())?,
    };
    let config = &mut trainer.config;
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(seed) = args.seed {
        if args.resume.is_some() && seed != config.seed {
            return Err(invalid("--seed cannot change when resuming"));
        }
        config.seed = seed;
    }
    if let Some(margin) = args.margin {
        config.margin = margin;
    }
    if let Some(lr) = args.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(batch) = args.batch_size {
        config.batch_size = batch;
    }
    config.validate()?;
    if args.resume.is_none() {
        // The initial weights depend on the seed.
        trainer = Trainer::new(trainer.config, trainer.model.input)?;
    }
    if trainer.epochs_done > trainer.config.epochs {
        return Err(invalid(format!(
            "checkpoint already has {} epochs, more than --epochs {}",
            trainer.epochs_done, trainer.config.epochs
        )));
    }

    let (_, features) = load_corpus(&args.corpus, &args.cache, trainer.model.input)?;
    let window = ProjectConfig::new(".").window_seconds;
    let outcome = train_corpus(&features, trainer, window, |e| {
        log::info!(
            "epoch {:>4}  triplet {:.5}  bce {:.5}",
            e.epoch,
            e.triplet,
            e.bce
        );
    })?;
    let trainer = outcome.trainer;
    save_checkpoint(&args.out, &trainer)?;
    let loss_csv = args
        .loss_csv
        .clone()
        .unwrap_or_else(|| args.out.with_extension("loss.csv"));
    write_loss_csv(&loss_csv, &trainer.history)?;
    if let Some(last) = trainer.history.last() {
        say!(
            "trained {} epochs ({} this run); final triplet loss {:.5}, bce {:.5}",
            trainer.epochs_done,
            outcome.epochs_run,
            last.triplet,
            last.bce
        );
    }
    say!(
        "checkpoint {}, loss curve {}",
        args.out.display(),
        loss_csv.display()
    );
    Ok(())
}

pub fn compare(args: CompareArgs) -> Result<()> {
    require_exists(&args.a)?;
    require_exists(&args.b)?;
    let mut detect = DetectConfig::default();
    if let Some(gamma) = args.gamma {
        detect.gamma = gamma;
    }
    if let Some(prop) = args.prop_threshold {
        detect.prop_threshold = prop;
    }
    let model = match &args.checkpoint {
        Some(path) => {
            require_exists(path)?;
            Some(
                load_checkpoint(path)
                    .with_context(|| format!("loading {}", path.display()))?
                    .model,
            )
        }
        None if args.baseline.is_none() => {
            return Err(invalid(
                "--checkpoint is required unless --baseline is given",
            ));
        }
        None => None,
    };
    let project = ProjectConfig::new(".");
    let result = compare_files(
        &args.a,
        &args.b,
        model.as_ref(),
        &detect,
        project.sample_rate,
        project.window_seconds,
        args.baseline.map(Into::into),
    )?;
    let written = result.write(&args.out)?;
    say!("{}", serde_json::to_string_pretty(&result)?);
    for file in written.files {
        log::info!("wrote {}", file.display());
    }
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    require_exists(&args.checkpoint)?;
    if args.kfold < 2 {
        return Err(invalid("--kfold must be at least 2"));
    }
    let model = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?
        .model;
    let (_, features) = load_corpus(&args.corpus, &args.cache, model.input)?;
    let pairs = build_eval_pairs(&features.tracks, args.seed)?;
    let window = ProjectConfig::new(".").window_seconds;
    let report = run_evaluation(
        &model,
        &features,
        &pairs,
        args.kfold,
        args.seed,
        window,
        args.baseline.map(Into::into),
    )?;
    let text = format_report(&report);
    {
        use std::io::Write;
        std::io::stdout().lock().write_all(text.as_bytes())?;
    }
    if let Some(out) = &args.out {
        write_text(&out.join("report.txt"), &text)?;
        write_text(
            &out.join("report.json"),
            &(serde_json::to_string_pretty(&report)? + "\n"),
        )?;
    }
    Ok(())
}

/// Labeled feature rows, and each labeled piece with its melody track index.
type LabeledSet = (Vec<(TrackFeatureVector, bool)>, Vec<(MidiPiece, usize)>);

fn label_examples(labels: &Path) -> Result<LabeledSet> {
    require_exists(labels)?;
    let rows = read_label_manifest(labels)?;
    if rows.is_empty() {
        return Err(invalid(format!("{}: no labeled tracks", labels.display())));
    }
    let base = labels.parent().unwrap_or(Path::new("."));
    let mut pieces: HashMap<String, MidiPiece> = HashMap::new();
    let mut examples = Vec::with_capacity(rows.len());
    let mut melodies = Vec::new();
    for row in &rows {
        if !pieces.contains_key(&row.file) {
            let path: PathBuf = base.join(&row.file);
            let bytes =
                std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let piece = parse_midi(&bytes).map_err(|e| PipelineError::at(&path, e))?;
            pieces.insert(row.file.clone(), piece);
        }
        let piece = &pieces[&row.file];
        examples.push((
            extract_track_features(piece, row.track_index)?,
            row.is_melody,
        ));
        if row.is_melody {
            melodies.push((piece.clone(), row.track_index));
        }
    }
    Ok((examples, melodies))
}

pub fn train_melody(args: TrainMelodyArgs) -> Result<()> {
    let (examples, pieces) = match &args.labels {
        Some(labels) => label_examples(labels)?,
        None => {
            if args.synthetic == 0 {
                return Err(invalid("--synthetic must be positive"));
            }
            let config = CorpusConfig {
                bars: 8,
                ..CorpusConfig::default()
            };
            let pieces = generate_corpus(args.seed, args.synthetic, &config);
            let examples = labeled_examples(&pieces)?;
            let labeled = pieces
                .into_iter()
                .filter_map(|p| p.melody_index().map(|m| (p, m)))
                .collect();
            (examples, labeled)
        }
    };
    let classifier = train_melody_classifier(&examples, &BoostConfig::default())?;
    classifier
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let correct = pieces
        .iter()
        .filter(|(piece, melody)| {
            predict_melody_track(&classifier, piece).is_ok_and(|p| p.track_index == *melody)
        })
        .count();
    say!(
        "trained on {} tracks; melody identified in {correct} of {} training pieces; classifier at {}",
        examples.len(),
        pieces.len(),
        args.out.display()
    );
    Ok(())
}
