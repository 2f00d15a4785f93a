use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::augment::AudioParams;
use crate::embedder::{TrackInfo, VersionInfo};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// One playable version of a track. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVersion {
    pub id: String,
    pub midi: String,
    pub record: Option<String>,
    pub pitch_shift: i32,
    pub time_shift: f64,
    pub tempo_factor: f64,
}

impl ManifestVersion {
    pub fn audio_params(&self) -> AudioParams {
        AudioParams {
            pitch_shift: self.pitch_shift,
            time_shift: self.time_shift,
            tempo_factor: self.tempo_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTrack {
    pub id: String,
    /// File name of the source piece.
    pub source: String,
    pub versions: Vec<ManifestVersion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub seed: u64,
    pub versions_per_piece: usize,
    pub tracks: Vec<ManifestTrack>,
}

impl CorpusManifest {
    pub fn to_json(&self) -> Result<String, PipelineError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, self.to_json()?).map_err(|e| PipelineError::at(path, e))
    }

    /// Accepts either the manifest file or the directory holding it.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), PipelineError> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| PipelineError::at(&file, e))?;
        let manifest: CorpusManifest =
            serde_json::from_str(&text).map_err(|e| PipelineError::at(&file, e))?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(PipelineError::Invalid(format!(
                "{}: unsupported manifest version {}",
                file.display(),
                manifest.format_version
            )));
        }
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, root))
    }

    /// Keeps only the listed track ids, in manifest order.
    pub fn subset(&self, ids: &[&str]) -> CorpusManifest {
        CorpusManifest {
            tracks: self
                .tracks
                .iter()
                .filter(|t| ids.contains(&t.id.as_str()))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Sampler view with the given per-version segment counts.
    pub fn track_infos(&self, segments: impl Fn(&str, &str) -> usize) -> Vec<TrackInfo> {
        self.tracks
            .iter()
            .map(|t| TrackInfo {
                id: t.id.clone(),
                versions: t
                    .versions
                    .iter()
                    .map(|v| VersionInfo {
                        id: v.id.clone(),
                        segments: segments(&t.id, &v.id),
                        time_shift: v.time_shift,
                        tempo_factor: v.tempo_factor,
                    })
                    .collect(),
            })
            .collect()
    }
}
