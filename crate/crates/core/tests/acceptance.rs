//! Acceptance run: one PASS/FAIL line per criterion, with the measured
//! values and the wall-clock time of each check.

use std::path::Path;
use std::time::{Duration, Instant};

use melodysim::augment::rng::{stream, Operation};
use melodysim::augment::{
    arpeggiate_chords, generate_version, invert_chords, split_notes, EnsembleTable,
};
use melodysim::corpus::{generate_corpus, CorpusConfig};
use melodysim::detect::{
    compute_metrics, detect, similarity_from_embeddings, ConfusionMatrix, DetectConfig,
};
use melodysim::dtw::dtw_distance;
use melodysim::embedder::{
    aligned_segment, batch_gradients, batch_loss, save_checkpoint, EmbeddingVector, GradMode,
    InputConfig, SimilarityModel, TrainConfig, Trainer, TripletInput, INPUT_DIM,
};
use melodysim::features::{chroma, cqt, pitch_contour, CqtParams, FeatureKind, FeatureSequence};
use melodysim::midi::{MidiPiece, TrackRole};
use melodysim::pipeline::{
    augment_corpus, build_eval_pairs, build_feature_store, compare_files, evaluate, train_corpus,
    ComparisonResult, CorpusFeatures, StoreConfig,
};
use melodysim::render::{pitch_shift, AudioBuffer};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run(number: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let (mut pass, mut detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if elapsed > budget {
        pass = false;
        detail.push_str(&format!("; over the {:.0} s budget", budget.as_secs_f64()));
    }
    println!(
        "{} {number}. {name} [{:.1} s]: {detail}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn metric_reproduction() -> Outcome {
    let segment = compute_metrics(&ConfusionMatrix {
        tp: 13_555,
        fp: 17_563,
        fn_: 81,
        tn: 319_824,
    })
    .similar;
    let song = compute_metrics(&ConfusionMatrix {
        tp: 545,
        fp: 22,
        fn_: 1,
        tn: 524,
    })
    .similar;
    let close = |v: f64, target: f64| (v - target).abs() <= 0.005;
    let ok = close(segment.precision, 0.44)
        && close(segment.recall, 0.99)
        && close(segment.f1, 0.61)
        && close(song.precision, 0.96)
        && close(song.recall, 1.00)
        && close(song.f1, 0.98);
    check(
        ok,
        format!(
            "segment P/R/F1 {:.3}/{:.3}/{:.3}, song P/R/F1 {:.3}/{:.3}/{:.3}",
            segment.precision, segment.recall, segment.f1, song.precision, song.recall, song.f1
        ),
    )
}

fn euclidean(a: &Array2<f32>, i: usize, b: &Array2<f32>, j: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(b.row(j).iter())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Every monotone path from (0,0) to the last cell, as cell lists.
fn all_paths(n: usize, m: usize) -> Vec<Vec<(usize, usize)>> {
    fn extend(
        n: usize,
        m: usize,
        path: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        let (i, j) = *path.last().unwrap();
        if (i, j) == (n - 1, m - 1) {
            out.push(path.clone());
            return;
        }
        for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
            if i + di < n && j + dj < m {
                path.push((i + di, j + dj));
                extend(n, m, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(n, m, &mut vec![(0, 0)], &mut out);
    out
}

fn dtw_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for k in 0..500 {
        let dim = if k % 2 == 0 { 1 } else { 12 };
        let (n, m) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let mut random =
            |len: usize| Array2::from_shape_fn((len, dim), |_| rng.gen_range(-4i32..=4) as f32);
        let (a, b) = (random(n), random(m));
        let oracle = all_paths(n, m)
            .iter()
            .map(|p| {
                p.iter()
                    .fold(0.0, |acc, &(i, j)| acc + euclidean(&a, i, &b, j))
            })
            .fold(f64::INFINITY, f64::min);
        let got = dtw_distance(
            &FeatureSequence::new(FeatureKind::Chroma, 1.0, a),
            &FeatureSequence::new(FeatureKind::Chroma, 1.0, b),
        )
        .map_err(|e| e.to_string())?
        .total_cost;
        if got != oracle {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        format!("{mismatches} of 500 pairs differ from path enumeration"),
    )
}

/// Signs of every non-smooth point the loss passes through: encoder and
/// head ReLU inputs, `|xa - xb|` components and triplet hinges. Central
/// differences are only a valid oracle when `θ ± ε` share this pattern.
fn kink_pattern(model: &SimilarityModel, batch: &[TripletInput], margin: f64) -> Vec<bool> {
    let seqs: Vec<_> = batch
        .iter()
        .flat_map(|t| [t.anchor, t.positive, t.negative])
        .collect();
    let (emb, cache) = model.encoder.forward(&seqs);
    let mut pattern = cache.relu_pattern();
    for k in 0..batch.len() {
        let (a, p, n) = (emb.row(3 * k), emb.row(3 * k + 1), emb.row(3 * k + 2));
        for (x, y) in [(a, p), (a, n), (p, n)] {
            let diff = (&x - &y).mapv(f64::abs).insert_axis(ndarray::Axis(0));
            pattern.extend((&x - &y).iter().map(|&v| v > 0.0));
            pattern.extend(model.head.forward(&diff).1.relu_pattern());
        }
        let d = |x: ndarray::ArrayView1<f64>, y: ndarray::ArrayView1<f64>| {
            (&x - &y).mapv(|v| v * v).sum().sqrt()
        };
        pattern.push(d(a, p) - d(a, n) + margin > 0.0);
    }
    pattern
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs: Vec<Array2<f32>> = (0..15)
        .map(|_| Array2::from_shape_fn((12, INPUT_DIM), |_| rng.gen_range(0.0f32..1.0)))
        .collect();
    let batch: Vec<TripletInput> = inputs
        .chunks(3)
        .map(|c| TripletInput {
            anchor: c[0].view(),
            positive: c[1].view(),
            negative: c[2].view(),
        })
        .collect();
    let config = TrainConfig::default();
    let model = SimilarityModel::new(11, InputConfig::default());
    let (_, grads) = batch_gradients(&model, &batch, &config, GradMode::FULL);
    let loss = |m: &SimilarityModel| batch_loss(m, &batch, &config, GradMode::FULL).total();
    let eps = 1e-4;
    let (mut worst, mut probes, mut redrawn): (f64, usize, usize) = (0.0, 0, 0);
    while probes < 20 && redrawn < 100 {
        let (mut plus, mut minus) = (model.clone(), model.clone());
        let analytic = if (probes + redrawn) % 2 == 0 {
            let i = rng.gen_range(0..model.encoder.params.len());
            plus.encoder.params[i] += eps;
            minus.encoder.params[i] -= eps;
            grads.encoder[i]
        } else {
            let i = rng.gen_range(0..model.head.params.len());
            plus.head.params[i] += eps;
            minus.head.params[i] -= eps;
            grads.head[i]
        };
        if kink_pattern(&plus, &batch, config.margin) != kink_pattern(&minus, &batch, config.margin)
        {
            redrawn += 1;
            continue;
        }
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
        let scale = analytic.abs().max(numeric.abs());
        let err = if scale < 1e-8 {
            0.0
        } else {
            (analytic - numeric).abs() / scale
        };
        worst = worst.max(err);
        probes += 1;
    }
    check(
        probes == 20 && worst < 1e-3,
        format!(
            "max relative error {worst:.2e} over {probes} probes on a 5-triplet batch \
             ({redrawn} probes redrawn because θ±ε straddled a ReLU or hinge kink)"
        ),
    )
}

/// Melody notes with split halves joined back: (pitch, onset, end).
fn joined_melody(piece: &MidiPiece) -> Vec<(u8, u64, u64)> {
    let melody = &piece.tracks[piece.melody_index().expect("melody")];
    let mut out: Vec<(u8, u64, u64)> = Vec::new();
    for n in &melody.notes {
        match out.last_mut() {
            Some(last) if last.0 == n.pitch && last.2 == n.onset => last.2 = n.end(),
            _ => out.push((n.pitch, n.onset, n.end())),
        }
    }
    out
}

fn augmentation_invariants() -> Outcome {
    let pieces = generate_corpus(40, 10, &CorpusConfig::default());
    let table = EnsembleTable::general_midi();
    let in_p = |p: &f64| (0.3..=0.85).contains(p);
    let (mut versions, mut melody_bad, mut range_bad, mut duration_bad) = (0, 0, 0, 0);
    for (seed, piece) in (0..10_000u64).flat_map(|s| pieces.iter().map(move |p| (s, p))) {
        let (version, r) = generate_version(piece, seed, &table).map_err(|e| e.to_string())?;
        versions += 1;
        if joined_melody(&version) != joined_melody(piece) {
            melody_bad += 1;
        }
        let ranges_ok = r
            .p_note
            .iter()
            .chain(&r.p_chinv)
            .chain(&r.p_charg)
            .all(in_p)
            && (0.1..=0.5).contains(&r.track_removal_p)
            && (-4..=4).contains(&r.pitch_shift)
            && (-3.0..=3.0).contains(&r.time_shift)
            && (0.9..=1.1).contains(&r.tempo_factor)
            && !r.muted[piece.melody_index().expect("melody")];
        if !ranges_ok {
            range_bad += 1;
        }
        let tpq = piece.ticks_per_quarter;
        for (i, track) in piece.tracks.iter().enumerate() {
            if track.is_percussion || r.muted[i] {
                continue;
            }
            let split = split_notes(
                track,
                r.p_note[i],
                &mut stream(seed, Some(i), Operation::SplitNotes),
                tpq,
            );
            let mut conserved = split.sounding_ticks() == track.sounding_ticks();
            if track.role != Some(TrackRole::Melody) {
                let inverted = invert_chords(
                    &split,
                    r.p_chinv[i],
                    &mut stream(seed, Some(i), Operation::InvertChords),
                );
                let arpeggiated = arpeggiate_chords(
                    &inverted,
                    r.p_charg[i],
                    &mut stream(seed, Some(i), Operation::ArpeggiateChords),
                    tpq,
                );
                conserved &= arpeggiated.sounding_ticks() == inverted.sounding_ticks();
            }
            if !conserved {
                duration_bad += 1;
            }
        }
    }
    check(
        melody_bad == 0 && range_bad == 0 && duration_bad == 0,
        format!(
            "{versions} versions: {melody_bad} melody changes, {range_bad} out-of-range records, \
             {duration_bad} split/arpeggiate duration mismatches"
        ),
    )
}

fn stop_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs: Vec<Array2<f32>> = (0..9)
        .map(|_| Array2::from_shape_fn((10, INPUT_DIM), |_| rng.gen_range(0.0f32..1.0)))
        .collect();
    let batch: Vec<TripletInput> = inputs
        .chunks(3)
        .map(|c| TripletInput {
            anchor: c[0].view(),
            positive: c[1].view(),
            negative: c[2].view(),
        })
        .collect();
    let mut trainer =
        Trainer::new(TrainConfig::default(), InputConfig::default()).map_err(|e| e.to_string())?;
    let bits = |p: &[f64]| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let encoder = bits(&trainer.model.encoder.params);
    let head = bits(&trainer.model.head.params);
    trainer.step(&batch, GradMode::BCE_ONLY);
    let encoder_same = bits(&trainer.model.encoder.params) == encoder;
    let head_moved = bits(&trainer.model.head.params) != head;
    check(
        encoder_same && head_moved,
        format!(
            "encoder bit-identical: {encoder_same}; head updated: {head_moved} ({} encoder parameters)",
            encoder.len()
        ),
    )
}

fn embeddings(
    model: &SimilarityModel,
    corpus: &CorpusFeatures,
    track: &str,
    version: &str,
) -> Result<Vec<EmbeddingVector>, String> {
    corpus
        .version_segments(track, version)
        .iter()
        .map(|s| model.embed(&s.input).map_err(|e| e.to_string()))
        .collect()
}

fn desk_scale(work: &Path) -> Outcome {
    let (n_train, n_test, seed) = (20, 5, 1);
    let inputs: Vec<_> = generate_corpus(2024, n_train + n_test, &CorpusConfig::default())
        .into_iter()
        .enumerate()
        .map(|(i, p)| (format!("piece{i:02}.mid"), p))
        .collect();
    let table = EnsembleTable::general_midi();
    let (manifest, _) =
        augment_corpus(&inputs, work, 7, 3, &table, None).map_err(|e| e.to_string())?;
    let store = StoreConfig::default();
    let (corpus, _) = build_feature_store(&manifest, work, &work.join("cache"), &store)
        .map_err(|e| e.to_string())?;
    let ids: Vec<String> = manifest.tracks.iter().map(|t| t.id.clone()).collect();
    let mut train_set = corpus.clone();
    train_set.tracks.retain(|t| ids[..n_train].contains(&t.id));
    let mut test_set = corpus;
    test_set.tracks.retain(|t| ids[n_train..].contains(&t.id));

    let config = TrainConfig {
        epochs: 200,
        seed,
        ..TrainConfig::default()
    };
    let trainer = Trainer::new(config, InputConfig::default()).map_err(|e| e.to_string())?;
    let model = train_corpus(&train_set, trainer, store.window_seconds, |_| {})
        .map_err(|e| e.to_string())?
        .trainer
        .model;

    let pairs = build_eval_pairs(&test_set.tracks, seed).map_err(|e| e.to_string())?;
    let report = evaluate(
        &model,
        &test_set,
        &pairs,
        5,
        seed,
        store.window_seconds,
        Some(FeatureKind::Chroma),
    )
    .map_err(|e| e.to_string())?;
    let seg_auc = report.segment.auc.unwrap_or(0.0);
    let song_f1 = report.song.metrics.similar.f1;
    let chroma_f1 = report
        .baseline
        .as_ref()
        .map(|b| b.metrics.similar.f1)
        .unwrap_or(f64::NAN);

    // Per-segment and per-piece checks on the held-out tracks.
    let (mut positives, mut confident) = (0, 0);
    let (mut bands, mut banded) = (0, 0);
    let (mut versions_similar, mut versions_total) = (0, 0);
    for track in &test_set.tracks {
        let original = &track.versions[0];
        let base = embeddings(&model, &test_set, &track.id, &original.id)?;
        for other in &track.versions[1..] {
            let emb = embeddings(&model, &test_set, &track.id, &other.id)?;
            let matrix =
                similarity_from_embeddings(&model, &base, &emb).map_err(|e| e.to_string())?;
            let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0, 0.0, 0);
            for i in 0..base.len() {
                let aligned = aligned_segment(original, i, other, store.window_seconds);
                for j in 0..emb.len() {
                    let s = matrix.values[[i, j]];
                    if aligned == Some(j) {
                        on += s;
                        n_on += 1;
                        positives += 1;
                        confident += usize::from(s > 0.5);
                    } else {
                        off += s;
                        n_off += 1;
                    }
                }
            }
            bands += 1;
            if n_on > 0 && (n_off == 0 || on / n_on as f64 > off / n_off as f64) {
                banded += 1;
            }
            versions_total += 1;
            versions_similar += usize::from(detect(&matrix, &DetectConfig::default()).similar);
        }
    }
    let confident_rate = confident as f64 / positives.max(1) as f64;

    let midi = |t: usize, v: usize| work.join(&manifest.tracks[t].versions[v].midi);
    let verdict = |a: &Path, b: &Path| -> Result<bool, String> {
        match compare_files(
            a,
            b,
            Some(&model),
            &DetectConfig::default(),
            store.sample_rate,
            store.window_seconds,
            None,
        )
        .map_err(|e| e.to_string())?
        {
            ComparisonResult::Model { verdict, .. } => Ok(verdict.similar),
            ComparisonResult::Baseline { .. } => Err("unexpected baseline result".into()),
        }
    };
    let self_similar = verdict(&midi(n_train, 0), &midi(n_train, 0))?;
    let version_similar = verdict(&midi(n_train, 0), &midi(n_train, 1))?;
    let unrelated_similar = verdict(&midi(n_train, 0), &midi(n_train + 1, 0))?;

    // Only the three thresholds gate the result. The per-pair figures are
    // reported because looping synthetic material makes off-diagonal cells
    // nearly as similar as the aligned ones.
    let ok = seg_auc >= 0.85 && song_f1 >= 0.90 && song_f1 > chroma_f1;
    check(
        ok,
        format!(
            "{n_train} training + {n_test} held-out pieces: segment AUC {seg_auc:.3}, song F1 {song_f1:.3} \
             vs chroma DTW F1 {chroma_f1:.3}. Diagnostics: positive segment pairs scoring > 0.5: {confident}/{positives} \
             ({:.1}%); diagonal band above off-diagonal in {banded}/{bands}; versions judged similar at \
             defaults {versions_similar}/{versions_total}; self similar {self_similar}, version similar \
             {version_similar}, unrelated similar {unrelated_similar}",
            100.0 * confident_rate
        ),
    )
}

fn sine(hz: f64, seconds: f64, sr: u32) -> AudioBuffer {
    let n = (seconds * sr as f64) as usize;
    AudioBuffer::new(
        sr,
        (0..n)
            .map(|i| (0.5 * (std::f64::consts::TAU * hz * i as f64 / sr as f64).sin()) as f32)
            .collect(),
    )
}

fn dft_peak_hz(samples: &[f32], sr: u32) -> f64 {
    let n = samples.len().next_power_of_two();
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .map(|&s| Complex::new(s as f64, 0.0))
        .collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let k = (1..n / 2)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
        .unwrap();
    k as f64 * sr as f64 / n as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn feature_sanity() -> Outcome {
    let sr = 16_000;
    let tone = sine(440.0, 3.0, sr);
    let params = CqtParams::default();
    let oracle_bin = (params.bins_per_octave as f64
        * (dft_peak_hz(&tone.samples, sr) / params.fmin).log2())
    .round() as usize;
    let spectrum = cqt(&tone).map_err(|e| e.to_string())?;
    let margin = 8;
    let interior = margin..spectrum.len() - margin;
    let argmax_ok = interior.clone().all(|t| {
        let row = spectrum.frames.row(t);
        (0..row.len())
            .max_by(|&a, &b| row[a].total_cmp(&row[b]))
            .unwrap()
            == oracle_bin
    });
    let classes = chroma(&spectrum).map_err(|e| e.to_string())?;
    let min_a = interior
        .clone()
        .map(|t| classes.frames[[t, 9]] as f64)
        .fold(f64::INFINITY, f64::min);
    let f0 = pitch_contour(&tone).map_err(|e| e.to_string())?;
    let voiced: Vec<f64> = (4..f0.len() - 4)
        .map(|t| f0.frames[[t, 0]] as f64)
        .filter(|&f| f > 0.0)
        .collect();
    let max_dev = voiced.iter().map(|f| (f - 440.0).abs()).fold(0.0, f64::max);
    let voiced_median = |seq: &FeatureSequence| {
        median(
            seq.frames
                .column(0)
                .iter()
                .map(|&v| v as f64)
                .filter(|&v| v > 0.0)
                .collect(),
        )
    };
    let low = sine(220.0, 3.0, sr);
    let before = voiced_median(&pitch_contour(&low).map_err(|e| e.to_string())?);
    let after = voiced_median(&pitch_contour(&pitch_shift(&low, 12.0)).map_err(|e| e.to_string())?);
    let ratio = after / before;
    check(
        argmax_ok
            && oracle_bin == 45
            && min_a >= 0.8
            && voiced.len() + 8 >= f0.len()
            && max_dev <= 1.0
            && (ratio - 2.0).abs() <= 0.04,
        format!(
            "CQT argmax bin {oracle_bin} (A4) in all interior frames: {argmax_ok}; min chroma mass on A \
             {min_a:.3}; max YIN deviation {max_dev:.3} Hz over {} voiced frames; +12 semitone shift \
             f0 ratio {ratio:.4}",
            voiced.len()
        ),
    )
}

fn determinism(work: &Path) -> Outcome {
    let config = CorpusConfig {
        bars: 8,
        ..CorpusConfig::default()
    };
    let inputs: Vec<_> = generate_corpus(8, 3, &config)
        .into_iter()
        .enumerate()
        .map(|(i, p)| (format!("p{i}.mid"), p))
        .collect();
    let table = EnsembleTable::general_midi();
    let mut manifests = Vec::new();
    let mut checkpoints = Vec::new();
    for run in 0..2 {
        let dir = work.join(format!("run{run}"));
        let (manifest, _) =
            augment_corpus(&inputs, &dir, 21, 3, &table, None).map_err(|e| e.to_string())?;
        manifests.push(std::fs::read(dir.join("manifest.json")).map_err(|e| e.to_string())?);
        let store = StoreConfig::default();
        let (corpus, _) = build_feature_store(&manifest, &dir, &dir.join("cache"), &store)
            .map_err(|e| e.to_string())?;
        let train = TrainConfig {
            epochs: 5,
            seed: 9,
            ..TrainConfig::default()
        };
        let trainer = Trainer::new(train, InputConfig::default()).map_err(|e| e.to_string())?;
        let trained = train_corpus(&corpus, trainer, store.window_seconds, |_| {})
            .map_err(|e| e.to_string())?
            .trainer;
        let path = dir.join("model.msck");
        save_checkpoint(&path, &trained).map_err(|e| e.to_string())?;
        checkpoints.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    let manifest_same = manifests[0] == manifests[1];
    let checkpoint_same = checkpoints[0] == checkpoints[1];
    check(
        manifest_same && checkpoint_same,
        format!(
            "manifest identical: {manifest_same} ({} bytes); checkpoint identical: {checkpoint_same} ({} bytes)",
            manifests[0].len(),
            checkpoints[0].len()
        ),
    )
}

type Criterion<'a> = (&'static str, Duration, Box<dyn FnOnce() -> Outcome + 'a>);

fn main() {
    let work = tempfile::tempdir().expect("temporary directory");
    let (desk, repeat) = (work.path().join("desk"), work.path().join("determinism"));
    let (second, minute) = (Duration::from_secs(1), Duration::from_secs(60));
    let criteria: Vec<Criterion> = vec![
        ("Metric reproduction", second, Box::new(metric_reproduction)),
        ("DTW oracle equivalence", 30 * second, Box::new(dtw_oracle)),
        ("Gradient correctness", minute, Box::new(gradient_check)),
        (
            "Augmentation invariants",
            2 * minute,
            Box::new(augmentation_invariants),
        ),
        (
            "Stop-gradient contract",
            10 * second,
            Box::new(stop_gradient),
        ),
        (
            "End-to-end desk scale",
            15 * minute,
            Box::new(|| desk_scale(&desk)),
        ),
        ("Feature sanity", 10 * second, Box::new(feature_sanity)),
        (
            "Determinism",
            15 * minute,
            Box::new(|| determinism(&repeat)),
        ),
    ];
    // ACCEPTANCE_ONLY=3,6 runs a subset.
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let mut results = Vec::new();
    for (i, (name, budget, f)) in criteria.into_iter().enumerate() {
        if only.as_ref().is_none_or(|o| o.contains(&(i + 1))) {
            results.push(run(i + 1, name, budget, f));
        }
    }
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
