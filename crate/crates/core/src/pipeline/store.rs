//! Rendering and the on-disk feature cache.
//!
//! Layout under the cache root:
//!
//! ```text
//! audio/{track}/{version}/segmentNNNN.wav, render.json
//! features/{track}/{version}/segmentNNNN.{cqt,chroma,pitch}.msft
//! features/{track}/{version}/segmentNNNN.key.json
//! ```
//!
//! A version is re-rendered only when the digest of its MIDI bytes and
//! render settings changes. A segment's features are reused when its key
//! records the same settings and either the WAV modification time or the
//! WAV's SHA-256 still matches. Encoder inputs are rebuilt from the cached
//! streams on load, each segment with its own key estimate.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::CorpusManifest;
use super::PipelineError;
use crate::embedder::{encoder_input, FeatureStore, InputConfig, SegmentRef, TrackInfo};
use crate::features::{
    chroma, pitch_contour, read_features, write_features, CqtKernel, CqtParams, FeatureKind,
    FeatureSequence,
};
use crate::midi::parse_midi;
use crate::render::{
    apply_audio_transforms, read_wav, segment_audio, segment_path, synthesize, write_wav,
    AudioBuffer,
};

const RENDER_STAMP: &str = "render.json";
const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub sample_rate: u32,
    pub window_seconds: f64,
    pub input: InputConfig,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            sample_rate: super::PIPELINE_SAMPLE_RATE,
            window_seconds: crate::render::WINDOW_SECONDS,
            input: InputConfig::default(),
        }
    }
}

/// Raw streams and the encoder input of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentFeatures {
    pub cqt: FeatureSequence,
    pub chroma: FeatureSequence,
    pub pitch: FeatureSequence,
    pub input: FeatureSequence,
}

impl SegmentFeatures {
    pub fn get(&self, kind: FeatureKind) -> &FeatureSequence {
        match kind {
            FeatureKind::Cqt => &self.cqt,
            FeatureKind::Chroma => &self.chroma,
            FeatureKind::Pitch => &self.pitch,
            FeatureKind::Stacked => &self.input,
        }
    }
}

/// CQT, chroma and f0 of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub cqt: FeatureSequence,
    pub chroma: FeatureSequence,
    pub pitch: FeatureSequence,
}

pub fn raw_features(audio: &AudioBuffer, kernel: &CqtKernel) -> Result<RawFeatures, PipelineError> {
    let cqt = kernel.apply(audio)?;
    let chroma = chroma(&cqt)?;
    let pitch = pitch_contour(audio)?;
    Ok(RawFeatures { cqt, chroma, pitch })
}

impl RawFeatures {
    /// Adds the encoder input, keyed on this segment alone.
    pub fn into_segment(self, input: &InputConfig) -> Result<SegmentFeatures, PipelineError> {
        let RawFeatures { cqt, chroma, pitch } = self;
        let input = encoder_input(&cqt, &chroma, &pitch, input)?;
        Ok(SegmentFeatures {
            cqt,
            chroma,
            pitch,
            input,
        })
    }
}

pub fn segment_features(
    audio: &AudioBuffer,
    kernel: &CqtKernel,
    input: &InputConfig,
) -> Result<SegmentFeatures, PipelineError> {
    raw_features(audio, kernel)?.into_segment(input)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StoreStats {
    pub rendered: usize,
    pub render_reused: usize,
    pub computed: usize,
    pub cache_hits: usize,
    /// Segments whose cache files were unreadable and got recomputed.
    pub recovered: usize,
    pub failures: Vec<(String, String)>,
}

/// Features of every segment of a corpus, plus the sampler's view of it.
#[derive(Debug, Clone, Default)]
pub struct CorpusFeatures {
    pub segments: HashMap<SegmentRef, SegmentFeatures>,
    pub tracks: Vec<TrackInfo>,
}

impl CorpusFeatures {
    /// Encoder inputs keyed by segment, as the trainer expects.
    pub fn input_store(&self) -> FeatureStore {
        self.segments
            .iter()
            .map(|(k, v)| (k.clone(), v.input.clone()))
            .collect()
    }

    pub fn segment_count(&self, track: &str, version: &str) -> usize {
        (0..)
            .take_while(|&i| {
                self.segments
                    .contains_key(&SegmentRef::new(track, version, i))
            })
            .count()
    }

    /// Segment features of one version, in order.
    pub fn version_segments(&self, track: &str, version: &str) -> Vec<&SegmentFeatures> {
        (0..self.segment_count(track, version))
            .map(|i| &self.segments[&SegmentRef::new(track, version, i)])
            .collect()
    }

    /// One stream over the whole version, segments joined end to end.
    pub fn concatenated(
        &self,
        track: &str,
        version: &str,
        kind: FeatureKind,
    ) -> Option<FeatureSequence> {
        let parts = self.version_segments(track, version);
        let first = parts.first()?.get(kind);
        let views: Vec<_> = parts.iter().map(|p| p.get(kind).frames.view()).collect();
        let frames = ndarray::concatenate(ndarray::Axis(0), &views).ok()?;
        Some(FeatureSequence::new(kind, first.frame_rate, frames))
    }
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct RenderStamp {
    digest: String,
    segments: usize,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct FeatureKey {
    feature_version: u32,
    sample_rate: u32,
    wav_sha256: String,
    wav_mtime_ns: u128,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn render_digest(
    midi: &[u8],
    config: &StoreConfig,
    params: &crate::augment::AudioParams,
) -> String {
    let mut h = Sha256::new();
    h.update(midi);
    h.update(config.sample_rate.to_le_bytes());
    h.update(config.window_seconds.to_le_bytes());
    h.update(params.pitch_shift.to_le_bytes());
    h.update(params.time_shift.to_le_bytes());
    h.update(params.tempo_factor.to_le_bytes());
    hex(&h.finalize())
}

fn mtime_ns(path: &Path) -> u128 {
    std::fs::metadata(path)
        .and_then(|m| m.modified())
        .ok()
        .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
        .map_or(0, |d| d.as_nanos())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Option<T> {
    serde_json::from_slice(&std::fs::read(path).ok()?).ok()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    std::fs::write(path, text).map_err(|e| PipelineError::at(path, e))
}

const KINDS: [(FeatureKind, &str); 3] = [
    (FeatureKind::Cqt, "cqt"),
    (FeatureKind::Chroma, "chroma"),
    (FeatureKind::Pitch, "pitch"),
];

fn feature_path(dir: &Path, index: usize, ext: &str) -> PathBuf {
    dir.join(format!("segment{index:04}.{ext}"))
}

/// Renders one version's segments unless the stamp says they are current.
/// Returns the WAV paths.
fn render_version(
    midi_path: &Path,
    audio_dir: &Path,
    track: &str,
    version: &super::ManifestVersion,
    config: &StoreConfig,
    stats: &mut StoreStats,
) -> Result<Vec<PathBuf>, PipelineError> {
    let midi = std::fs::read(midi_path).map_err(|e| PipelineError::at(midi_path, e))?;
    let params = version.audio_params();
    let digest = render_digest(&midi, config, &params);
    let stamp_path = audio_dir.join(RENDER_STAMP);
    let wav = |i: usize| audio_dir.join(format!("segment{i:04}.wav"));
    if let Some(stamp) = read_json::<RenderStamp>(&stamp_path) {
        if stamp.digest == digest && (0..stamp.segments).all(|i| wav(i).exists()) {
            stats.render_reused += 1;
            return Ok((0..stamp.segments).map(wav).collect());
        }
    }
    let piece = parse_midi(&midi).map_err(|e| PipelineError::at(midi_path, e))?;
    let audio = apply_audio_transforms(&synthesize(&piece, config.sample_rate), &params)?;
    let segments = segment_audio(&audio, config.window_seconds, track, &version.id);
    std::fs::create_dir_all(audio_dir).map_err(|e| PipelineError::at(audio_dir, e))?;
    let mut paths = Vec::with_capacity(segments.len());
    for (i, seg) in segments.iter().enumerate() {
        write_wav(&wav(i), &seg.audio)?;
        paths.push(wav(i));
    }
    write_json(
        &stamp_path,
        &RenderStamp {
            digest,
            segments: segments.len(),
        },
    )?;
    stats.rendered += 1;
    Ok(paths)
}

fn load_cached(dir: &Path, index: usize) -> Result<RawFeatures, PipelineError> {
    let mut seqs = Vec::with_capacity(3);
    for (kind, ext) in KINDS {
        let seq = read_features(&feature_path(dir, index, &format!("{ext}.msft")))?;
        if seq.kind != kind {
            return Err(PipelineError::Invalid(format!(
                "cached {ext} has kind {}",
                seq.kind
            )));
        }
        seqs.push(seq);
    }
    let pitch = seqs.pop().expect("three");
    let chroma = seqs.pop().expect("two");
    let cqt = seqs.pop().expect("one");
    if chroma.dim() != 12 || pitch.dim() != 1 {
        return Err(PipelineError::Invalid(
            "cached streams have the wrong width".into(),
        ));
    }
    Ok(RawFeatures { cqt, chroma, pitch })
}

fn segment_cached(
    wav: &Path,
    dir: &Path,
    index: usize,
    kernel: &CqtKernel,
    config: &StoreConfig,
    stats: &mut StoreStats,
) -> Result<RawFeatures, PipelineError> {
    let key_path = feature_path(dir, index, "key.json");
    let mtime = mtime_ns(wav);
    let mut wav_hash: Option<String> = None;
    let hash = |cache: &mut Option<String>| -> Result<String, PipelineError> {
        if cache.is_none() {
            let bytes = std::fs::read(wav).map_err(|e| PipelineError::at(wav, e))?;
            *cache = Some(hex(&Sha256::digest(&bytes)));
        }
        Ok(cache.clone().expect("set"))
    };
    if let Some(key) = read_json::<FeatureKey>(&key_path) {
        let settings_match =
            key.feature_version == FEATURE_VERSION && key.sample_rate == config.sample_rate;
        if settings_match && (key.wav_mtime_ns == mtime || key.wav_sha256 == hash(&mut wav_hash)?) {
            match load_cached(dir, index) {
                Ok(features) => {
                    stats.cache_hits += 1;
                    if key.wav_mtime_ns != mtime {
                        write_json(
                            &key_path,
                            &FeatureKey {
                                wav_mtime_ns: mtime,
                                ..key
                            },
                        )?;
                    }
                    return Ok(features);
                }
                Err(e) => {
                    log::warn!(
                        "{}: corrupted feature cache ({e}); recomputing",
                        dir.join(format!("segment{index:04}")).display()
                    );
                    stats.recovered += 1;
                }
            }
        }
    }
    let audio = read_wav(wav)?;
    if audio.sample_rate != config.sample_rate {
        return Err(PipelineError::Invalid(format!(
            "{} is {} Hz, expected {}",
            wav.display(),
            audio.sample_rate,
            config.sample_rate
        )));
    }
    let features = raw_features(&audio, kernel)?;
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::at(dir, e))?;
    for (ext, seq) in [
        ("cqt", &features.cqt),
        ("chroma", &features.chroma),
        ("pitch", &features.pitch),
    ] {
        write_features(&feature_path(dir, index, &format!("{ext}.msft")), seq)?;
    }
    let key = FeatureKey {
        feature_version: FEATURE_VERSION,
        sample_rate: config.sample_rate,
        wav_sha256: hash(&mut wav_hash)?,
        wav_mtime_ns: mtime,
    };
    write_json(&key_path, &key)?;
    stats.computed += 1;
    Ok(features)
}

/// Renders every manifest version (as needed) and loads or computes the
/// features of each segment. Per-version failures are logged and reported
/// in the stats; the call fails only when nothing could be processed.
pub fn build_feature_store(
    manifest: &CorpusManifest,
    manifest_root: &Path,
    cache_root: &Path,
    config: &StoreConfig,
) -> Result<(CorpusFeatures, StoreStats), PipelineError> {
    let kernel = CqtKernel::new(CqtParams::default(), config.sample_rate)?;
    let mut stats = StoreStats::default();
    let mut corpus = CorpusFeatures::default();
    for track in &manifest.tracks {
        for version in &track.versions {
            let rel = segment_path(&track.id, &version.id, 0);
            let version_rel = rel.parent().expect("track/version");
            let audio_dir = cache_root.join("audio").join(version_rel);
            let feature_dir = cache_root.join("features").join(version_rel);
            let result = render_version(
                &manifest_root.join(&version.midi),
                &audio_dir,
                &track.id,
                version,
                config,
                &mut stats,
            )
            .and_then(|wavs| {
                wavs.iter()
                    .enumerate()
                    .map(|(i, wav)| {
                        segment_cached(wav, &feature_dir, i, &kernel, config, &mut stats)
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .and_then(|raws| {
                raws.into_iter()
                    .map(|r| r.into_segment(&config.input))
                    .collect::<Result<Vec<_>, _>>()
            });
            match result {
                Ok(features) => {
                    for (i, f) in features.into_iter().enumerate() {
                        corpus
                            .segments
                            .insert(SegmentRef::new(&track.id, &version.id, i), f);
                    }
                }
                Err(e) => {
                    log::error!("{}/{}: {e}", track.id, version.id);
                    stats
                        .failures
                        .push((format!("{}/{}", track.id, version.id), e.to_string()));
                }
            }
        }
    }
    if corpus.segments.is_empty() {
        let detail = stats
            .failures
            .first()
            .map(|(k, e)| format!(": {k}: {e}"))
            .unwrap_or_default();
        return Err(PipelineError::Invalid(format!(
            "no segments could be rendered{detail}"
        )));
    }
    corpus.tracks = manifest.track_infos(|t, v| corpus.segment_count(t, v));
    Ok((corpus, stats))
}
