//! Triplet sampling over a segmented corpus.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EmbedError;
use crate::render::segment_path;

/// One rendered segment: `{track}/{version}/segment{index:04}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SegmentRef {
    pub track: String,
    pub version: String,
    pub segment: usize,
}

impl SegmentRef {
    pub fn new(track: &str, version: &str, segment: usize) -> Self {
        SegmentRef {
            track: track.to_string(),
            version: version.to_string(),
            segment,
        }
    }

    pub fn relative_path(&self) -> PathBuf {
        segment_path(&self.track, &self.version, self.segment)
    }

    /// Parses `track/version/segmentNNNN.wav`.
    pub fn from_relative_path(path: &str) -> Option<Self> {
        let mut parts = path.trim_end_matches(".wav").split('/');
        let track = parts.next()?;
        let version = parts.next()?;
        let segment = parts.next()?.strip_prefix("segment")?.parse().ok()?;
        parts
            .next()
            .is_none()
            .then(|| SegmentRef::new(track, version, segment))
    }
}

impl std::fmt::Display for SegmentRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}/{}/segment{:04}",
            self.track, self.version, self.segment
        )
    }
}

/// What the sampler needs to know about one rendered version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionInfo {
    pub id: String,
    pub segments: usize,
    pub time_shift: f64,
    pub tempo_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackInfo {
    pub id: String,
    pub versions: Vec<VersionInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: SegmentRef,
    pub positive: SegmentRef,
    pub negative: SegmentRef,
}

/// Index of the segment of `to` holding the musical content at the centre
/// of segment `segment` of `from`.
///
/// Audio time `t` in a version corresponds to score time
/// `(t - time_shift) * tempo_factor`. With both tempo factors equal to 1
/// this is `segment + round((shift_to - shift_from) / window)`.
pub fn aligned_segment(
    from: &VersionInfo,
    segment: usize,
    to: &VersionInfo,
    window: f64,
) -> Option<usize> {
    let centre = (segment as f64 + 0.5) * window;
    let score_time = (centre - from.time_shift) * from.tempo_factor;
    let target = score_time / to.tempo_factor + to.time_shift;
    if target < 0.0 {
        return None;
    }
    let index = (target / window).floor() as usize;
    (index < to.segments).then_some(index)
}

const ALIGN_ATTEMPTS: usize = 16;

/// Samples one epoch of triplets: each usable track anchors `revisits`
/// triplets. Tracks with fewer than two non-empty versions are skipped.
pub fn build_triplets<R: Rng + ?Sized>(
    tracks: &[TrackInfo],
    revisits: usize,
    window: f64,
    rng: &mut R,
) -> Vec<Triplet> {
    let with_audio = |t: &TrackInfo| t.versions.iter().filter(|v| v.segments > 0).count();
    let negatives: Vec<&TrackInfo> = tracks.iter().filter(|t| with_audio(t) > 0).collect();
    if negatives.len() < 2 {
        log::warn!(
            "need at least two tracks with audio to form triplets, found {}",
            negatives.len()
        );
        return Vec::new();
    }
    let mut out = Vec::new();
    for track in tracks {
        let versions: Vec<&VersionInfo> =
            track.versions.iter().filter(|v| v.segments > 0).collect();
        if versions.len() < 2 {
            log::warn!("track {} has a single version; skipped", track.id);
            continue;
        }
        for _ in 0..revisits {
            let Some((anchor, positive)) = sample_positive(track, &versions, window, rng) else {
                log::warn!("track {}: no aligned positive found", track.id);
                continue;
            };
            let others: Vec<&&TrackInfo> = negatives.iter().filter(|t| t.id != track.id).collect();
            let other = others[rng.gen_range(0..others.len())];
            let other_versions: Vec<&VersionInfo> =
                other.versions.iter().filter(|v| v.segments > 0).collect();
            let v = other_versions[rng.gen_range(0..other_versions.len())];
            let negative = SegmentRef::new(&other.id, &v.id, rng.gen_range(0..v.segments));
            out.push(Triplet {
                anchor,
                positive,
                negative,
            });
        }
    }
    out
}

fn sample_positive<R: Rng + ?Sized>(
    track: &TrackInfo,
    versions: &[&VersionInfo],
    window: f64,
    rng: &mut R,
) -> Option<(SegmentRef, SegmentRef)> {
    for _ in 0..ALIGN_ATTEMPTS {
        let a = rng.gen_range(0..versions.len());
        let mut p = rng.gen_range(0..versions.len() - 1);
        if p >= a {
            p += 1;
        }
        let segment = rng.gen_range(0..versions[a].segments);
        if let Some(aligned) = aligned_segment(versions[a], segment, versions[p], window) {
            return Some((
                SegmentRef::new(&track.id, &versions[a].id, segment),
                SegmentRef::new(&track.id, &versions[p].id, aligned),
            ));
        }
    }
    None
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    anchor: String,
    positive: String,
    negative: String,
}

fn path_string(s: &SegmentRef) -> String {
    s.relative_path().to_string_lossy().replace('\\', "/")
}

/// One JSON object per line with the three segment paths.
pub fn write_triplet_manifest(path: &Path, triplets: &[Triplet]) -> Result<(), EmbedError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in triplets {
        let line = ManifestLine {
            anchor: path_string(&t.anchor),
            positive: path_string(&t.positive),
            negative: path_string(&t.negative),
        };
        serde_json::to_writer(&mut file, &line)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_triplet_manifest(path: &Path) -> Result<Vec<Triplet>, EmbedError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line)?;
        let seg = |p: &str| {
            SegmentRef::from_relative_path(p)
                .ok_or_else(|| EmbedError::Input(format!("bad segment path {p}")))
        };
        out.push(Triplet {
            anchor: seg(&parsed.anchor)?,
            positive: seg(&parsed.positive)?,
            negative: seg(&parsed.negative)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn version(id: &str, segments: usize, time_shift: f64, tempo_factor: f64) -> VersionInfo {
        VersionInfo {
            id: id.to_string(),
            segments,
            time_shift,
            tempo_factor,
        }
    }

    fn corpus(tracks: usize) -> Vec<TrackInfo> {
        (0..tracks)
            .map(|t| TrackInfo {
                id: format!("Track{t:05}"),
                versions: vec![
                    version("original", 4, 0.0, 1.0),
                    version("version0", 4, 0.0, 1.0),
                ],
            })
            .collect()
    }

    #[test]
    fn identical_timing_keeps_segment_index() {
        let a = version("original", 5, 0.0, 1.0);
        let b = version("version0", 5, 0.0, 1.0);
        assert_eq!(aligned_segment(&b, 2, &a, 10.0), Some(2));
    }

    #[test]
    fn small_shift_keeps_index_large_shift_moves_it() {
        let orig = version("original", 6, 0.0, 1.0);
        assert_eq!(
            aligned_segment(&orig, 2, &version("v", 6, 3.0, 1.0), 10.0),
            Some(2)
        );
        assert_eq!(
            aligned_segment(&orig, 2, &version("v", 6, -3.0, 1.0), 10.0),
            Some(2)
        );
        assert_eq!(
            aligned_segment(&orig, 2, &version("v", 6, 5.0, 1.0), 10.0),
            Some(3)
        );
        assert_eq!(
            aligned_segment(&version("v", 6, 6.0, 1.0), 3, &orig, 10.0),
            Some(2)
        );
    }

    #[test]
    fn round_rule_matches_without_tempo_change() {
        for shift_a in [-3.0, -1.2, 0.0, 2.5, 3.0] {
            for shift_b in [-3.0, -0.4, 0.0, 1.7, 3.0] {
                let a = version("a", 100, shift_a, 1.0);
                let b = version("b", 100, shift_b, 1.0);
                let expected = (50.0 + ((shift_b - shift_a) / 10.0_f64 + 0.5).floor()) as usize;
                assert_eq!(aligned_segment(&a, 50, &b, 10.0), Some(expected));
            }
        }
    }

    #[test]
    fn tempo_factor_is_accounted_for() {
        // A 10% faster version reaches score time 35 s at 31.8 s.
        let orig = version("original", 6, 0.0, 1.0);
        let fast = version("v", 6, 0.0, 1.1);
        assert_eq!(aligned_segment(&orig, 3, &fast, 10.0), Some(3));
        let slow = version("v", 6, 0.0, 0.9);
        assert_eq!(aligned_segment(&orig, 3, &slow, 10.0), Some(3));
        assert_eq!(aligned_segment(&orig, 4, &slow, 10.0), Some(5));
    }

    #[test]
    fn triplet_invariants() {
        let tracks = corpus(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let triplets = build_triplets(&tracks, 4, 10.0, &mut rng);
        assert_eq!(triplets.len(), 20);
        for t in &triplets {
            assert_eq!(t.anchor.track, t.positive.track);
            assert_ne!(t.anchor.version, t.positive.version);
            assert_eq!(t.anchor.segment, t.positive.segment);
            assert_ne!(t.anchor.track, t.negative.track);
        }
    }

    #[test]
    fn single_track_or_single_version_yields_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(build_triplets(&corpus(1), 4, 10.0, &mut rng).is_empty());
        let mut tracks = corpus(3);
        tracks[0].versions.truncate(1);
        let triplets = build_triplets(&tracks, 4, 10.0, &mut rng);
        assert_eq!(triplets.len(), 8);
        assert!(triplets.iter().all(|t| t.anchor.track != "Track00000"));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("triplets.jsonl");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let triplets = build_triplets(&corpus(3), 2, 10.0, &mut rng);
        write_triplet_manifest(&path, &triplets).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().next().unwrap().contains("/segment000"));
        assert_eq!(read_triplet_manifest(&path).unwrap(), triplets);
    }

    #[test]
    fn segment_path_parsing() {
        let s = SegmentRef::new("Track00125", "version0", 2);
        assert_eq!(s.to_string(), "Track00125/version0/segment0002");
        assert_eq!(
            SegmentRef::from_relative_path("Track00125/version0/segment0002.wav"),
            Some(s)
        );
        assert_eq!(SegmentRef::from_relative_path("a/b"), None);
    }
}
