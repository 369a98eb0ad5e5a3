//! JSON manifest format.
//!
//! ```json
//! {"videos": ["v1"],
//!  "shots": [{"video": "v1", "index": 0, "start_frame": 0, "end_frame": 24, "keyframe": "k1"}],
//!  "keyframes": [{"id": "k1", "video": "v1", "shot_index": 0, "timestamp_s": 0.5,
//!                 "image": "frames/k1.ppm", "concepts": {"faces": 0.9}}]}
//! ```
//!
//! A keyframe needs either `image` (features are computed from the PPM
//! file) or a precomputed `histogram`. `spatial_grid` and
//! `palette_coverage` are optional precomputed extras.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{decode_ppm, Corpus, CorpusError, Keyframe, Shot};
use crate::colorfeat::{ConceptVector, Histogram216, PaletteColor, SpatialColorGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub videos: Vec<String>,
    pub shots: Vec<ShotEntry>,
    pub keyframes: Vec<KeyframeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotEntry {
    pub video: String,
    pub index: u32,
    pub start_frame: u64,
    pub end_frame: u64,
    pub keyframe: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframeEntry {
    pub id: String,
    pub video: String,
    pub shot_index: u32,
    pub timestamp_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_grid: Option<[u8; 9]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub palette_coverage: Option<[f64; PaletteColor::COUNT]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concepts: Option<BTreeMap<String, f64>>,
}

/// Reads a manifest file; image paths resolve against its directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| CorpusError::MalformedManifest(format!("{}: {e}", path.display())))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Corpus, CorpusError> {
    let manifest: Manifest =
        serde_json::from_str(text).map_err(|e| CorpusError::MalformedManifest(e.to_string()))?;
    manifest.into_corpus(base_dir)
}

impl Manifest {
    pub fn into_corpus(self, base_dir: &Path) -> Result<Corpus, CorpusError> {
        let shots = self
            .shots
            .into_iter()
            .map(|s| Shot {
                video_id: s.video,
                shot_index: s.index,
                start_frame: s.start_frame,
                end_frame: s.end_frame,
                keyframe_id: s.keyframe,
            })
            .collect();
        let keyframes = self
            .keyframes
            .into_iter()
            .map(|entry| entry.into_keyframe(base_dir))
            .collect::<Result<Vec<_>, _>>()?;
        Corpus::from_parts(self.videos, shots, keyframes)
    }

    /// Manifest that reloads into a field-for-field identical corpus.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        Manifest {
            videos: corpus.videos().to_vec(),
            shots: corpus
                .all_shots()
                .map(|s| ShotEntry {
                    video: s.video_id.clone(),
                    index: s.shot_index,
                    start_frame: s.start_frame,
                    end_frame: s.end_frame,
                    keyframe: s.keyframe_id.clone(),
                })
                .collect(),
            keyframes: corpus
                .keyframes()
                .iter()
                .map(|k| KeyframeEntry {
                    id: k.id.clone(),
                    video: k.video_id.clone(),
                    shot_index: k.shot_index,
                    timestamp_s: k.timestamp_sec,
                    image: k.image_ref.clone(),
                    histogram: Some(k.histogram.bins().to_vec()),
                    spatial_grid: k.spatial_grid.map(|g| g.0.map(u8::from)),
                    palette_coverage: Some(k.palette_coverage),
                    concepts: (!k.concepts.is_empty())
                        .then(|| k.concepts.iter().map(|(l, s)| (l.to_string(), s)).collect()),
                })
                .collect(),
        }
    }
}

impl KeyframeEntry {
    fn into_keyframe(self, base_dir: &Path) -> Result<Keyframe, CorpusError> {
        let malformed = |what: String| CorpusError::MalformedManifest(format!("keyframe {:?}: {what}", self.id));
        let concepts = ConceptVector::from_scores(self.concepts.clone().unwrap_or_default())
            .map_err(|e| malformed(e.to_string()))?;

        let mut kf = if let Some(rel) = &self.image {
            let full = base_dir.join(rel);
            let bytes = std::fs::read(&full).map_err(|source| CorpusError::Io {
                path: full.clone(),
                source,
            })?;
            let image = decode_ppm(&bytes).map_err(|source| CorpusError::ImageDecode {
                path: full.clone(),
                source,
            })?;
            let mut kf = Keyframe::from_image(
                self.id.clone(),
                self.video.clone(),
                self.shot_index,
                self.timestamp_s,
                &image,
            )?;
            kf.image_ref = Some(rel.clone());
            kf
        } else {
            let Some(bins) = self.histogram.clone() else {
                return Err(malformed("needs either an image or a histogram".into()));
            };
            let hist = Histogram216::from_bins(bins).map_err(|e| malformed(e.to_string()))?;
            let mut kf = Keyframe::from_histogram(
                self.id.clone(),
                self.video.clone(),
                self.shot_index,
                self.timestamp_s,
                hist,
            );
            if let Some(cells) = self.spatial_grid {
                let mut grid = [PaletteColor::Black; 9];
                for (slot, idx) in grid.iter_mut().zip(cells) {
                    *slot = PaletteColor::try_from(idx).map_err(|e| malformed(e.to_string()))?;
                }
                kf = kf.with_spatial_grid(SpatialColorGrid(grid));
            }
            if let Some(cov) = self.palette_coverage {
                if cov.iter().any(|c| !(0.0..=1.0).contains(c)) {
                    return Err(malformed("palette coverage outside [0, 1]".into()));
                }
                kf = kf.with_palette_coverage(cov);
            }
            kf
        };
        kf.concepts = concepts;
        Ok(kf)
    }
}

/// Serializes a corpus as manifest JSON.
pub fn write_manifest(corpus: &Corpus) -> String {
    serde_json::to_string_pretty(&Manifest::from_corpus(corpus))
        .expect("manifest serialization is infallible")
}
