//! Videos, shots and keyframes.
//!
//! A [`Corpus`] is built once (usually by [`load_manifest`]) and is
//! immutable afterwards. Construction checks the cross references between
//! videos, shots and keyframes so that downstream code can index freely.

mod image;
mod manifest;
mod shots;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use thiserror::Error;

use crate::colorfeat::{
    color_histogram, coverage_from_histogram, palette_coverage, spatial_color_grid, ColorError,
    ConceptVector, Histogram216, PaletteColor, SpatialColorGrid,
};

pub use image::{decode_ppm, Image, ImageError, Rgb};
pub use manifest::{load_manifest, parse_manifest, write_manifest, Manifest};
pub use shots::{segment_shots, shot_spans, ShotSpan, DEFAULT_SHOT_TAU};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("cannot decode image {path}: {source}")]
    ImageDecode {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
    #[error("unknown video {0:?}")]
    UnknownVideo(String),
    #[error("no frames given")]
    EmptyInput,
    #[error("frame dimensions differ: {0}")]
    DimensionMismatch(String),
    #[error("shot threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Feature(#[from] ColorError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shot {
    pub video_id: String,
    pub shot_index: u32,
    pub start_frame: u64,
    pub end_frame: u64,
    pub keyframe_id: String,
}

/// One indexed image and its precomputed features.
#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub id: String,
    pub video_id: String,
    pub shot_index: u32,
    pub timestamp_sec: f64,
    /// Image path as written in the manifest (relative to it).
    pub image_ref: Option<PathBuf>,
    pub histogram: Histogram216,
    pub spatial_grid: Option<SpatialColorGrid>,
    /// Fraction of pixels quantized to each palette color.
    pub palette_coverage: [f64; PaletteColor::COUNT],
    pub concepts: ConceptVector,
}

impl Keyframe {
    /// Keyframe with all color features computed from `image`.
    pub fn from_image(
        id: impl Into<String>,
        video_id: impl Into<String>,
        shot_index: u32,
        timestamp_sec: f64,
        image: &Image,
    ) -> Result<Self, ColorError> {
        let spatial_grid = match spatial_color_grid(image) {
            Ok(g) => Some(g),
            Err(ColorError::ImageTooSmall { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(Keyframe {
            id: id.into(),
            video_id: video_id.into(),
            shot_index,
            timestamp_sec,
            image_ref: None,
            histogram: color_histogram(image)?,
            spatial_grid,
            palette_coverage: palette_coverage(image)?,
            concepts: ConceptVector::new(),
        })
    }

    /// Keyframe from a precomputed histogram; palette coverage is estimated
    /// from the histogram.
    pub fn from_histogram(
        id: impl Into<String>,
        video_id: impl Into<String>,
        shot_index: u32,
        timestamp_sec: f64,
        histogram: Histogram216,
    ) -> Self {
        Keyframe {
            id: id.into(),
            video_id: video_id.into(),
            shot_index,
            timestamp_sec,
            image_ref: None,
            palette_coverage: coverage_from_histogram(&histogram),
            histogram,
            spatial_grid: None,
            concepts: ConceptVector::new(),
        }
    }

    pub fn with_concepts(mut self, concepts: ConceptVector) -> Self {
        self.concepts = concepts;
        self
    }

    pub fn with_spatial_grid(mut self, grid: SpatialColorGrid) -> Self {
        self.spatial_grid = Some(grid);
        self
    }

    pub fn with_palette_coverage(mut self, coverage: [f64; PaletteColor::COUNT]) -> Self {
        self.palette_coverage = coverage;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    videos: Vec<String>,
    shots: BTreeMap<String, Vec<Shot>>,
    keyframes: Vec<Keyframe>,
    index: HashMap<String, usize>,
    concept_labels: Vec<String>,
}

impl Corpus {
    /// Assembles a corpus and checks every cross reference.
    ///
    /// Shots may arrive in any order; they are grouped per video and sorted
    /// by index. Keyframes keep their given order.
    pub fn from_parts(
        videos: Vec<String>,
        shots: Vec<Shot>,
        keyframes: Vec<Keyframe>,
    ) -> Result<Self, CorpusError> {
        let mut video_set = BTreeSet::new();
        for v in &videos {
            if !video_set.insert(v.as_str()) {
                return Err(CorpusError::MalformedManifest(format!("duplicate video {v:?}")));
            }
        }

        let mut index = HashMap::with_capacity(keyframes.len());
        for (i, kf) in keyframes.iter().enumerate() {
            if index.insert(kf.id.clone(), i).is_some() {
                return Err(CorpusError::MalformedManifest(format!(
                    "duplicate keyframe id {:?}",
                    kf.id
                )));
            }
            if !video_set.contains(kf.video_id.as_str()) {
                return Err(CorpusError::DanglingReference(format!(
                    "keyframe {:?} names unknown video {:?}",
                    kf.id, kf.video_id
                )));
            }
            if !(kf.timestamp_sec >= 0.0) {
                return Err(CorpusError::MalformedManifest(format!(
                    "keyframe {:?} has negative timestamp",
                    kf.id
                )));
            }
        }

        let mut by_video: BTreeMap<String, Vec<Shot>> = BTreeMap::new();
        for shot in shots {
            if !video_set.contains(shot.video_id.as_str()) {
                return Err(CorpusError::DanglingReference(format!(
                    "shot {} names unknown video {:?}",
                    shot.shot_index, shot.video_id
                )));
            }
            let Some(&k) = index.get(&shot.keyframe_id) else {
                return Err(CorpusError::DanglingReference(format!(
                    "shot {} of {:?} names unknown keyframe {:?}",
                    shot.shot_index, shot.video_id, shot.keyframe_id
                )));
            };
            let kf = &keyframes[k];
            if kf.video_id != shot.video_id || kf.shot_index != shot.shot_index {
                return Err(CorpusError::DanglingReference(format!(
                    "shot {} of {:?} names keyframe {:?} which belongs to shot {} of {:?}",
                    shot.shot_index, shot.video_id, kf.id, kf.shot_index, kf.video_id
                )));
            }
            if shot.end_frame < shot.start_frame {
                return Err(CorpusError::MalformedManifest(format!(
                    "shot {} of {:?} ends before it starts",
                    shot.shot_index, shot.video_id
                )));
            }
            by_video.entry(shot.video_id.clone()).or_default().push(shot);
        }

        for (video, list) in by_video.iter_mut() {
            list.sort_by_key(|s| s.shot_index);
            for (k, s) in list.iter().enumerate() {
                if s.shot_index as usize != k {
                    return Err(CorpusError::MalformedManifest(format!(
                        "shots of {video:?} are not numbered 0..{} without gaps",
                        list.len()
                    )));
                }
            }
            for w in list.windows(2) {
                if w[1].start_frame != w[0].end_frame + 1 {
                    return Err(CorpusError::MalformedManifest(format!(
                        "shots {} and {} of {video:?} are not contiguous",
                        w[0].shot_index, w[1].shot_index
                    )));
                }
            }
        }

        // every keyframe must be the keyframe of the shot it claims
        for kf in &keyframes {
            let owner = by_video
                .get(&kf.video_id)
                .and_then(|list| list.get(kf.shot_index as usize));
            if owner.map(|s| s.keyframe_id.as_str()) != Some(kf.id.as_str()) {
                return Err(CorpusError::DanglingReference(format!(
                    "keyframe {:?} claims shot {} of {:?}, which does not name it",
                    kf.id, kf.shot_index, kf.video_id
                )));
            }
        }

        let concept_labels = keyframes
            .iter()
            .flat_map(|k| k.concepts.labels().map(str::to_string))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        Ok(Corpus {
            videos,
            shots: by_video,
            keyframes,
            index,
            concept_labels,
        })
    }

    /// Merges externally loaded concept scores (e.g. from the concept CSV)
    /// into the keyframes. CSV scores override manifest scores per label.
    pub fn with_concept_scores(
        self,
        scores: &HashMap<String, ConceptVector>,
    ) -> Result<Self, CorpusError> {
        let Corpus {
            videos,
            shots,
            mut keyframes,
            index,
            ..
        } = self;
        let mut ids: Vec<&String> = scores.keys().collect();
        ids.sort();
        for id in ids {
            let Some(&i) = index.get(id) else {
                return Err(CorpusError::DanglingReference(format!(
                    "concept scores reference unknown keyframe {id:?}"
                )));
            };
            keyframes[i].concepts.extend_from(&scores[id]);
        }
        Corpus::from_parts(videos, shots.into_values().flatten().collect(), keyframes)
    }

    pub fn videos(&self) -> &[String] {
        &self.videos
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    pub fn keyframe(&self, id: &str) -> Option<&Keyframe> {
        self.index.get(id).map(|&i| &self.keyframes[i])
    }

    pub fn shots(&self, video_id: &str) -> Option<&[Shot]> {
        self.shots.get(video_id).map(Vec::as_slice)
    }

    pub fn all_shots(&self) -> impl Iterator<Item = &Shot> {
        self.videos
            .iter()
            .filter_map(|v| self.shots.get(v))
            .flatten()
    }

    /// Sorted union of every concept label in the corpus.
    pub fn concept_labels(&self) -> &[String] {
        &self.concept_labels
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }
}

/// Storyboard payload for one video: shots in index order with their
/// keyframes.
pub fn shot_view<'a>(
    corpus: &'a Corpus,
    video_id: &str,
) -> Result<Vec<(&'a Shot, &'a Keyframe)>, CorpusError> {
    if !corpus.videos.iter().any(|v| v == video_id) {
        return Err(CorpusError::UnknownVideo(video_id.to_string()));
    }
    Ok(corpus
        .shots(video_id)
        .unwrap_or_default()
        .iter()
        .map(|s| {
            let kf = corpus
                .keyframe(&s.keyframe_id)
                .expect("shot keyframes are checked at construction");
            (s, kf)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kf(id: &str, video: &str, shot: u32) -> Keyframe {
        Keyframe::from_histogram(id, video, shot, shot as f64, Histogram216::one_hot(0))
    }

    fn shot(video: &str, index: u32, start: u64, end: u64, kf: &str) -> Shot {
        Shot {
            video_id: video.into(),
            shot_index: index,
            start_frame: start,
            end_frame: end,
            keyframe_id: kf.into(),
        }
    }

    fn three_shot_corpus() -> Corpus {
        Corpus::from_parts(
            vec!["v1".into()],
            vec![
                shot("v1", 2, 20, 29, "c"),
                shot("v1", 0, 0, 9, "a"),
                shot("v1", 1, 10, 19, "b"),
            ],
            vec![kf("a", "v1", 0), kf("b", "v1", 1), kf("c", "v1", 2)],
        )
        .unwrap()
    }

    #[test]
    fn shot_view_orders_by_index() {
        let c = three_shot_corpus();
        let view = shot_view(&c, "v1").unwrap();
        let ids: Vec<_> = view.iter().map(|(_, k)| k.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(matches!(
            shot_view(&c, "vX"),
            Err(CorpusError::UnknownVideo(v)) if v == "vX"
        ));
    }

    #[test]
    fn rejects_gaps_and_overlaps() {
        let gap = Corpus::from_parts(
            vec!["v1".into()],
            vec![shot("v1", 0, 0, 9, "a"), shot("v1", 1, 11, 19, "b")],
            vec![kf("a", "v1", 0), kf("b", "v1", 1)],
        );
        assert!(matches!(gap, Err(CorpusError::MalformedManifest(_))));

        let skipped = Corpus::from_parts(
            vec!["v1".into()],
            vec![shot("v1", 0, 0, 9, "a"), shot("v1", 2, 10, 19, "b")],
            vec![kf("a", "v1", 0), kf("b", "v1", 2)],
        );
        assert!(matches!(skipped, Err(CorpusError::MalformedManifest(_))));
    }

    #[test]
    fn rejects_dangling_references() {
        let missing_kf = Corpus::from_parts(
            vec!["v1".into()],
            vec![shot("v1", 0, 0, 9, "k9")],
            vec![kf("a", "v1", 0)],
        );
        assert!(matches!(missing_kf, Err(CorpusError::DanglingReference(_))));

        let missing_video = Corpus::from_parts(
            vec!["v1".into()],
            vec![shot("v1", 0, 0, 9, "a")],
            vec![kf("a", "v1", 0), kf("b", "v2", 0)],
        );
        assert!(matches!(missing_video, Err(CorpusError::DanglingReference(_))));

        let orphan = Corpus::from_parts(
            vec!["v1".into()],
            vec![shot("v1", 0, 0, 9, "a")],
            vec![kf("a", "v1", 0), kf("b", "v1", 0)],
        );
        assert!(matches!(orphan, Err(CorpusError::DanglingReference(_))));
    }

    #[test]
    fn concept_scores_merge_and_index_labels() {
        let c = three_shot_corpus();
        let scores = crate::colorfeat::parse_concept_scores("a,faces,0.9\nc,Texts,0.3").unwrap();
        let c = c.with_concept_scores(&scores).unwrap();
        assert_eq!(c.keyframe("a").unwrap().concepts.get("faces"), Some(0.9));
        assert_eq!(c.concept_labels(), ["Texts", "faces"]);

        let bad = crate::colorfeat::parse_concept_scores("zz,faces,0.9").unwrap();
        assert!(matches!(
            three_shot_corpus().with_concept_scores(&bad),
            Err(CorpusError::DanglingReference(_))
        ));
    }
}
