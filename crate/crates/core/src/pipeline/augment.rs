use std::path::Path;

use sha2::{Digest, Sha256};

use super::manifest::{
    CorpusManifest, ManifestTrack, ManifestVersion, MANIFEST_FILE, MANIFEST_VERSION,
};
use super::PipelineError;
use crate::augment::{generate_version, EnsembleTable};
use crate::melody::{assign_roles, default_classifier, MelodyClassifier};
use crate::midi::{parse_midi, write_midi, MidiPiece};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentSummary {
    pub tracks: usize,
    pub midi_written: usize,
    pub records_written: usize,
    /// Inputs that could not be used, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Seed of version `index` of the piece loaded from `source`. Keyed on the
/// file name, so adding inputs does not reshuffle existing versions.
pub fn version_seed(seed: u64, source: &str, index: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(source.as_bytes());
    hasher.update((index as u64).to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::at(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| PipelineError::at(path, e))
}

/// Writes each piece plus `versions` augmented variants under `out_dir`
/// and returns the manifest (also saved as `out_dir/manifest.json`).
///
/// Pieces without a melody role get roles from `melody`, or from the
/// bundled melody classifier when none is given.
pub fn augment_corpus(
    pieces: &[(String, MidiPiece)],
    out_dir: &Path,
    seed: u64,
    versions: usize,
    table: &EnsembleTable,
    melody: Option<&MelodyClassifier>,
) -> Result<(CorpusManifest, AugmentSummary), PipelineError> {
    if pieces.is_empty() {
        return Err(PipelineError::Invalid("no input pieces".into()));
    }
    let mut classifier: Option<MelodyClassifier> = melody.cloned();
    let mut summary = AugmentSummary::default();
    let mut tracks = Vec::with_capacity(pieces.len());
    for (source, piece) in pieces {
        let piece = if piece.melody_index().is_some() {
            piece.clone()
        } else {
            match assign_roles(piece, classifier.get_or_insert_with(default_classifier)) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("{source}: cannot identify a melody track ({e}); skipped");
                    summary.skipped.push((source.clone(), e.to_string()));
                    continue;
                }
            }
        };
        let id = format!("Track{:05}", tracks.len());
        let mut entries = Vec::with_capacity(versions + 1);
        let original = format!("{id}/original.mid");
        write_file(&out_dir.join(&original), &write_midi(&piece)?)?;
        summary.midi_written += 1;
        entries.push(ManifestVersion {
            id: "original".into(),
            midi: original,
            record: None,
            pitch_shift: 0,
            time_shift: 0.0,
            tempo_factor: 1.0,
        });
        for k in 0..versions {
            let (version, record) = generate_version(&piece, version_seed(seed, source, k), table)?;
            let midi = format!("{id}/version{k}.mid");
            let record_path = format!("{id}/version{k}.json");
            write_file(&out_dir.join(&midi), &write_midi(&version)?)?;
            write_file(&out_dir.join(&record_path), record.to_json()?.as_bytes())?;
            summary.midi_written += 1;
            summary.records_written += 1;
            entries.push(ManifestVersion {
                id: format!("version{k}"),
                midi,
                record: Some(record_path),
                pitch_shift: record.pitch_shift,
                time_shift: record.time_shift,
                tempo_factor: record.tempo_factor,
            });
        }
        tracks.push(ManifestTrack {
            id,
            source: source.clone(),
            versions: entries,
        });
    }
    if tracks.is_empty() {
        return Err(PipelineError::Invalid("no usable input pieces".into()));
    }
    summary.tracks = tracks.len();
    let manifest = CorpusManifest {
        format_version: MANIFEST_VERSION,
        seed,
        versions_per_piece: versions,
        tracks,
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok((manifest, summary))
}

/// Reads every `.mid`/`.midi` file of `input_dir` (sorted by name),
/// skipping unparseable ones, then runs [`augment_corpus`].
pub fn augment_directory(
    input_dir: &Path,
    out_dir: &Path,
    seed: u64,
    versions: usize,
    table: &EnsembleTable,
    melody: Option<&MelodyClassifier>,
) -> Result<(CorpusManifest, AugmentSummary), PipelineError> {
    let entries = std::fs::read_dir(input_dir).map_err(|e| PipelineError::at(input_dir, e))?;
    let mut files: Vec<_> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(PipelineError::Invalid(format!(
            "no MIDI files in {}",
            input_dir.display()
        )));
    }
    let mut pieces = Vec::new();
    let mut skipped = Vec::new();
    for path in files {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let parsed = std::fs::read(&path)
            .map_err(PipelineError::from)
            .and_then(|b| Ok(parse_midi(&b)?));
        match parsed {
            Ok(piece) if piece.tracks.iter().any(|t| !t.notes.is_empty()) => {
                pieces.push((name, piece))
            }
            Ok(_) => {
                log::warn!("{name}: no notes; skipped");
                skipped.push((name, "no notes".to_string()));
            }
            Err(e) => {
                log::warn!("{name}: {e}; skipped");
                skipped.push((name, e.to_string()));
            }
        }
    }
    if pieces.is_empty() {
        return Err(PipelineError::Invalid(format!(
            "no parseable MIDI files in {}",
            input_dir.display()
        )));
    }
    let (manifest, mut summary) = augment_corpus(&pieces, out_dir, seed, versions, table, melody)?;
    skipped.append(&mut summary.skipped);
    summary.skipped = skipped;
    Ok((manifest, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, CorpusConfig};

    fn inputs(n: usize) -> Vec<(String, MidiPiece)> {
        let config = CorpusConfig {
            bars: 4,
            ..CorpusConfig::default()
        };
        generate_corpus(3, n, &config)
            .into_iter()
            .enumerate()
            .map(|(i, p)| (format!("piece{i}.mid"), p))
            .collect()
    }

    #[test]
    fn two_pieces_three_versions() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, summary) = augment_corpus(
            &inputs(2),
            dir.path(),
            7,
            3,
            &EnsembleTable::general_midi(),
            None,
        )
        .unwrap();
        assert_eq!((summary.midi_written, summary.records_written), (8, 6));
        assert_eq!(manifest.tracks.len(), 2);
        assert_eq!(manifest.tracks[0].versions.len(), 4);
        for v in &manifest.tracks[1].versions {
            assert!(dir.path().join(&v.midi).exists());
        }
        let (loaded, root) = CorpusManifest::load(dir.path()).unwrap();
        assert_eq!(loaded, manifest);
        assert_eq!(root, dir.path());
    }

    #[test]
    fn rerun_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let table = EnsembleTable::general_midi();
        augment_corpus(&inputs(2), a.path(), 11, 2, &table, None).unwrap();
        augment_corpus(&inputs(2), b.path(), 11, 2, &table, None).unwrap();
        for rel in [
            "manifest.json",
            "Track00001/version1.mid",
            "Track00000/version0.json",
        ] {
            assert_eq!(
                std::fs::read(a.path().join(rel)).unwrap(),
                std::fs::read(b.path().join(rel)).unwrap(),
                "{rel}"
            );
        }
    }

    #[test]
    fn directory_input_skips_bad_files() {
        let input = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        for (name, piece) in inputs(1) {
            std::fs::write(input.path().join(name), write_midi(&piece).unwrap()).unwrap();
        }
        std::fs::write(input.path().join("broken.mid"), b"not midi").unwrap();
        let (manifest, summary) = augment_directory(
            input.path(),
            out.path(),
            1,
            3,
            &EnsembleTable::general_midi(),
            None,
        )
        .unwrap();
        assert_eq!(manifest.tracks.len(), 1);
        assert_eq!(summary.skipped.len(), 1);
    }

    #[test]
    fn empty_directory_is_invalid_input() {
        let input = tempfile::tempdir().unwrap();
        let err = augment_directory(
            input.path(),
            input.path(),
            1,
            3,
            &EnsembleTable::general_midi(),
            None,
        )
        .unwrap_err();
        assert!(err.is_invalid_input());
    }
}
