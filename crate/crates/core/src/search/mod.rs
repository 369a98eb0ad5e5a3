//! Interactive retrieval over a [`Corpus`] and a [`MapCatalog`].
//!
//! Every search returns a [`ResultSet`] whose entries are sorted by score
//! descending with ties broken by keyframe id. Searches are pure: the
//! descriptor's `issued_at_ms` is left at 0 and stamped by the caller.

mod history;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorfeat::{cosine_distance_dense, dominant_from_coverage, l1_distance, PaletteColor};
use crate::corpus::Corpus;
use crate::som::MapCatalog;

pub use history::{SearchHistory, HISTORY_CAPACITY};

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("query is blank")]
    BlankQuery,
    #[error("no colors selected")]
    EmptyColorSet,
    #[error("unknown keyframe {0:?}")]
    UnknownKeyframe(String),
    #[error("unknown video {0:?}")]
    UnknownVideo(String),
    #[error("keyframe {0:?} has no non-zero vector in this feature space")]
    ZeroVector(String),
    #[error("sketch has no cells set")]
    EmptySketch,
    #[error("min_match {min_match} must be between 1 and the {set_cells} set cells")]
    BadMinMatch { min_match: usize, set_cells: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Closed vocabulary of search features. Also the usage-logging vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchFeature {
    ConceptSearch,
    MapSearch,
    ColorFilter,
    SimilaritySearch,
    Sketch,
    ShotFilter,
}

impl SearchFeature {
    pub fn as_str(self) -> &'static str {
        match self {
            SearchFeature::ConceptSearch => "concept_search",
            SearchFeature::MapSearch => "map_search",
            SearchFeature::ColorFilter => "color_filter",
            SearchFeature::SimilaritySearch => "similarity_search",
            SearchFeature::Sketch => "sketch",
            SearchFeature::ShotFilter => "shot_filter",
        }
    }
}

impl fmt::Display for SearchFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDescriptor {
    pub feature: SearchFeature,
    pub parameters: BTreeMap<String, String>,
    pub issued_at_ms: u64,
}

impl QueryDescriptor {
    fn new<const N: usize>(feature: SearchFeature, params: [(&str, String); N]) -> Self {
        QueryDescriptor {
            feature,
            parameters: params.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            issued_at_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub keyframe_id: String,
    pub score: f64,
}

/// Scored, ordered keyframe ids plus the query that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub entries: Vec<ResultEntry>,
    pub query: QueryDescriptor,
}

impl ResultSet {
    /// Sorts by score descending then id ascending, drops repeated ids
    /// (keeping the best-ranked) and truncates to `limit`.
    pub fn ranked(
        scored: impl IntoIterator<Item = (String, f64)>,
        query: QueryDescriptor,
        limit: usize,
    ) -> Self {
        let mut entries: Vec<ResultEntry> = scored
            .into_iter()
            .map(|(keyframe_id, score)| ResultEntry { keyframe_id, score })
            .collect();
        entries.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.keyframe_id.cmp(&b.keyframe_id))
        });
        let mut seen = BTreeSet::new();
        entries.retain(|e| seen.insert(e.keyframe_id.clone()));
        entries.truncate(limit);
        ResultSet { entries, query }
    }

    pub fn stamped(mut self, issued_at_ms: u64) -> Self {
        self.query.issued_at_ms = issued_at_ms;
        self
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.keyframe_id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Whether the ordering invariant holds.
    pub fn is_well_ordered(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.entries.iter().all(|e| seen.insert(e.keyframe_id.as_str()))
            && self.entries.windows(2).all(|w| {
                w[0].score > w[1].score
                    || (w[0].score == w[1].score && w[0].keyframe_id < w[1].keyframe_id)
            })
    }
}

fn tokens(query: &str) -> Result<Vec<String>, SearchError> {
    let toks: Vec<String> = query.split_whitespace().map(str::to_lowercase).collect();
    if toks.is_empty() {
        return Err(SearchError::BlankQuery);
    }
    Ok(toks)
}

/// Conjunctive concept search. A keyframe matches when every query token
/// is a case-insensitive substring of some label scoring `>= theta`; its
/// score is the sum over tokens of the best such label score.
pub fn concept_search(
    corpus: &Corpus,
    query: &str,
    theta: f64,
    limit: usize,
) -> Result<ResultSet, SearchError> {
    let toks = tokens(query)?;
    if !(0.0..=1.0).contains(&theta) {
        return Err(SearchError::InvalidParameter(format!("theta {theta} outside [0, 1]")));
    }
    if limit == 0 {
        return Err(SearchError::InvalidParameter("limit must be at least 1".into()));
    }
    let mut scored = Vec::new();
    for kf in corpus.keyframes() {
        let labels: Vec<(String, f64)> = kf
            .concepts
            .iter()
            .filter(|(_, s)| *s >= theta)
            .map(|(l, s)| (l.to_lowercase(), s))
            .collect();
        let mut total = 0.0;
        let mut all = true;
        for tok in &toks {
            let best = labels
                .iter()
                .filter(|(l, _)| l.contains(tok.as_str()))
                .map(|(_, s)| *s)
                .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))));
            match best {
                Some(s) => total += s,
                None => {
                    all = false;
                    break;
                }
            }
        }
        if all {
            scored.push((kf.id.clone(), total));
        }
    }
    let query = QueryDescriptor::new(
        SearchFeature::ConceptSearch,
        [
            ("query", query.trim().to_string()),
            ("theta", theta.to_string()),
            ("limit", limit.to_string()),
        ],
    );
    Ok(ResultSet::ranked(scored, query, limit))
}

/// Ids of maps whose lowercased title contains every query token, ordered
/// by title.
pub fn map_search(catalog: &MapCatalog, query: &str) -> Result<Vec<String>, SearchError> {
    let toks = tokens(query)?;
    let mut hits: Vec<(&str, &str)> = catalog
        .maps
        .iter()
        .filter(|m| {
            let title = m.title.to_lowercase();
            toks.iter().all(|t| title.contains(t.as_str()))
        })
        .map(|m| (m.title.as_str(), m.id.as_str()))
        .collect();
    hits.sort();
    Ok(hits.into_iter().map(|(_, id)| id.to_string()).collect())
}

/// Keyframes where every wanted color is dominant; scored by the summed
/// coverage of the wanted colors.
pub fn color_filter(
    corpus: &Corpus,
    wanted: &BTreeSet<PaletteColor>,
    coverage_theta: f64,
) -> Result<ResultSet, SearchError> {
    if wanted.is_empty() {
        return Err(SearchError::EmptyColorSet);
    }
    let mut scored = Vec::new();
    for kf in corpus.keyframes() {
        let dominant = dominant_from_coverage(&kf.palette_coverage, coverage_theta)
            .map_err(|e| SearchError::InvalidParameter(e.to_string()))?;
        let cover: Option<f64> = wanted
            .iter()
            .map(|w| dominant.iter().find(|(c, _)| c == w).map(|(_, cov)| *cov))
            .sum();
        if let Some(score) = cover {
            scored.push((kf.id.clone(), score));
        }
    }
    let names: Vec<&str> = wanted.iter().map(|c| c.name()).collect();
    let query = QueryDescriptor::new(
        SearchFeature::ColorFilter,
        [
            ("colors", names.join(",")),
            ("coverage_theta", coverage_theta.to_string()),
        ],
    );
    Ok(ResultSet::ranked(scored, query, usize::MAX))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    /// 216-bin histograms under L1 distance.
    Color,
    /// Concept vectors over the corpus label universe under cosine distance.
    Concept,
}

impl FeatureSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSpace::Color => "color",
            FeatureSpace::Concept => "concept",
        }
    }
}

/// Exact k nearest neighbours of `probe_id`, excluding the probe. Scores are
/// negated distances. In concept space, keyframes without any concept score
/// are not candidates.
pub fn similarity_search(
    corpus: &Corpus,
    probe_id: &str,
    k: usize,
    space: FeatureSpace,
) -> Result<ResultSet, SearchError> {
    let probe = corpus
        .keyframe(probe_id)
        .ok_or_else(|| SearchError::UnknownKeyframe(probe_id.to_string()))?;
    if k == 0 {
        return Err(SearchError::InvalidParameter("k must be at least 1".into()));
    }
    let mut scored: Vec<(String, f64)> = Vec::with_capacity(corpus.len());
    match space {
        FeatureSpace::Color => {
            for kf in corpus.keyframes() {
                if kf.id != probe.id {
                    scored.push((kf.id.clone(), -l1_distance(&probe.histogram, &kf.histogram)));
                }
            }
        }
        FeatureSpace::Concept => {
            let universe = corpus.concept_labels();
            let p = probe.concepts.project(universe);
            if p.iter().all(|x| *x == 0.0) {
                return Err(SearchError::ZeroVector(probe_id.to_string()));
            }
            for kf in corpus.keyframes() {
                if kf.id == probe.id {
                    continue;
                }
                if let Ok(d) = cosine_distance_dense(&p, &kf.concepts.project(universe)) {
                    scored.push((kf.id.clone(), -d));
                }
            }
        }
    }
    let query = QueryDescriptor::new(
        SearchFeature::SimilaritySearch,
        [
            ("probe", probe_id.to_string()),
            ("k", k.to_string()),
            ("space", space.as_str().to_string()),
        ],
    );
    Ok(ResultSet::ranked(scored, query, k))
}

/// Partial 3×3 color sketch; unset cells are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sketch(pub [Option<PaletteColor>; 9]);

impl Sketch {
    pub fn set(mut self, row: usize, col: usize, color: PaletteColor) -> Self {
        self.0[row * 3 + col] = Some(color);
        self
    }

    pub fn set_cells(&self) -> usize {
        self.0.iter().flatten().count()
    }
}

/// Keyframes whose spatial grid agrees with at least `min_match` of the
/// sketch's set cells; scored by the number of agreeing cells. Keyframes
/// without a spatial grid never match.
pub fn sketch_search(
    corpus: &Corpus,
    sketch: &Sketch,
    min_match: usize,
) -> Result<ResultSet, SearchError> {
    let set_cells = sketch.set_cells();
    if set_cells == 0 {
        return Err(SearchError::EmptySketch);
    }
    if min_match == 0 || min_match > set_cells {
        return Err(SearchError::BadMinMatch {
            min_match,
            set_cells,
        });
    }
    let scored = corpus.keyframes().iter().filter_map(|kf| {
        let grid = kf.spatial_grid?;
        let hits = sketch
            .0
            .iter()
            .zip(grid.cells())
            .filter(|(want, have)| **want == Some(**have))
            .count();
        (hits >= min_match).then(|| (kf.id.clone(), hits as f64))
    });
    let cells: Vec<String> = sketch
        .0
        .iter()
        .map(|c| c.map_or("-".to_string(), |c| c.index().to_string()))
        .collect();
    let query = QueryDescriptor::new(
        SearchFeature::Sketch,
        [("cells", cells.join(",")), ("min_match", min_match.to_string())],
    );
    Ok(ResultSet::ranked(scored.collect::<Vec<_>>(), query, usize::MAX))
}

/// Restricts a result set to keyframes of one video, keeping scores.
pub fn shot_filter(
    corpus: &Corpus,
    results: &ResultSet,
    video_id: &str,
) -> Result<ResultSet, SearchError> {
    if !corpus.videos().iter().any(|v| v == video_id) {
        return Err(SearchError::UnknownVideo(video_id.to_string()));
    }
    let kept = results
        .entries
        .iter()
        .filter(|e| corpus.keyframe(&e.keyframe_id).is_some_and(|k| k.video_id == video_id))
        .map(|e| (e.keyframe_id.clone(), e.score));
    let query = QueryDescriptor::new(
        SearchFeature::ShotFilter,
        [
            ("video", video_id.to_string()),
            ("source", results.query.feature.to_string()),
        ],
    );
    Ok(ResultSet::ranked(kept.collect::<Vec<_>>(), query, usize::MAX))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorfeat::{ConceptVector, Histogram216, SpatialColorGrid};
    use crate::corpus::{Image, Keyframe, Shot};
    use crate::som::{build_map_catalog, SomConfig};

    fn corpus(kfs: Vec<Keyframe>) -> Corpus {
        let mut shots = Vec::new();
        let mut videos = Vec::new();
        let mut kfs2 = Vec::new();
        for (i, mut k) in kfs.into_iter().enumerate() {
            let video = format!("v{}", i % 2);
            if !videos.contains(&video) {
                videos.push(video.clone());
            }
            k.video_id = video.clone();
            k.shot_index = (i / 2) as u32;
            shots.push(Shot {
                video_id: video,
                shot_index: (i / 2) as u32,
                start_frame: (i / 2) as u64,
                end_frame: (i / 2) as u64,
                keyframe_id: k.id.clone(),
            });
            kfs2.push(k);
        }
        Corpus::from_parts(videos, shots, kfs2).unwrap()
    }

    fn with_concepts(id: &str, scores: &[(&str, f64)]) -> Keyframe {
        Keyframe::from_histogram(id, "v", 0, 0.0, Histogram216::one_hot(0))
            .with_concepts(ConceptVector::from_scores(scores.iter().cloned()).unwrap())
    }

    fn three() -> Corpus {
        corpus(vec![
            with_concepts("k1", &[("faces", 0.9)]),
            with_concepts("k2", &[("faces", 0.2)]),
            with_concepts("k3", &[("texts", 0.8)]),
        ])
    }

    #[test]
    fn concept_search_examples() {
        let c = three();
        let r = concept_search(&c, "faces", 0.3, 10).unwrap();
        assert_eq!(
            r.entries,
            vec![ResultEntry {
                keyframe_id: "k1".into(),
                score: 0.9
            }]
        );
        assert_eq!(r.query.feature, SearchFeature::ConceptSearch);
        assert!(concept_search(&c, "faces texts", 0.3, 10).unwrap().is_empty());
        assert_eq!(concept_search(&c, "   ", 0.3, 10), Err(SearchError::BlankQuery));
    }

    #[test]
    fn concept_search_is_case_insensitive_and_sums_tokens() {
        let c = corpus(vec![
            with_concepts("a", &[("Faces", 0.6), ("Outdoor", 0.7)]),
            with_concepts("b", &[("faces", 0.9)]),
        ]);
        let r = concept_search(&c, "FACE door", 0.5, 10).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["a"]);
        assert!((r.entries[0].score - 1.3).abs() < 1e-12);
        let r = concept_search(&c, "fac", 0.5, 1).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["b"]);
    }

    #[test]
    fn concept_search_parameter_checks() {
        let c = three();
        assert!(matches!(
            concept_search(&c, "faces", 1.5, 10),
            Err(SearchError::InvalidParameter(_))
        ));
        assert!(matches!(
            concept_search(&c, "faces", 0.5, 0),
            Err(SearchError::InvalidParameter(_))
        ));
    }

    fn image_kf(id: &str, img: &Image) -> Keyframe {
        Keyframe::from_image(id, "v", 0, 0.0, img).unwrap()
    }

    fn red_blue(red_rows: usize) -> Image {
        let px = (0..100)
            .map(|i| if i / 10 < red_rows { [255, 0, 0] } else { [0, 0, 255] })
            .collect();
        Image::new(10, 10, px).unwrap()
    }

    #[test]
    fn color_filter_examples() {
        let c = corpus(vec![
            image_kf("rb", &red_blue(6)),
            image_kf("g", &Image::filled(10, 10, [40, 160, 60]).unwrap()),
        ]);
        let r = color_filter(&c, &BTreeSet::from([PaletteColor::Red]), 0.15).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["rb"]);
        assert_eq!(r.entries[0].score, 0.6);

        let both = BTreeSet::from([PaletteColor::Red, PaletteColor::Green]);
        assert!(color_filter(&c, &both, 0.15).unwrap().is_empty());

        let rb = BTreeSet::from([PaletteColor::Red, PaletteColor::Blue]);
        assert_eq!(color_filter(&c, &rb, 0.15).unwrap().entries[0].score, 1.0);

        assert_eq!(
            color_filter(&c, &BTreeSet::new(), 0.15),
            Err(SearchError::EmptyColorSet)
        );
    }

    #[test]
    fn similarity_finds_exact_duplicate_first() {
        let c = corpus(vec![
            image_kf("k1", &red_blue(3)),
            image_kf("k2", &red_blue(5)),
            image_kf("k9", &red_blue(3)),
            image_kf("k4", &red_blue(9)),
        ]);
        let r = similarity_search(&c, "k1", 2, FeatureSpace::Color).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["k9", "k2"]);
        assert_eq!(r.entries[0].score, 0.0);
        assert!(!r.ids().any(|id| id == "k1"));
        assert_eq!(
            similarity_search(&c, "nope", 2, FeatureSpace::Color),
            Err(SearchError::UnknownKeyframe("nope".into()))
        );
    }

    #[test]
    fn similarity_in_concept_space() {
        let c = corpus(vec![
            with_concepts("p", &[("a", 1.0)]),
            with_concepts("same", &[("a", 0.3)]),
            with_concepts("mixed", &[("a", 0.5), ("b", 0.5)]),
            with_concepts("other", &[("b", 1.0)]),
            with_concepts("empty", &[]),
        ]);
        let r = similarity_search(&c, "p", 10, FeatureSpace::Concept).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["same", "mixed", "other"]);
        assert_eq!(
            similarity_search(&c, "empty", 3, FeatureSpace::Concept),
            Err(SearchError::ZeroVector("empty".into()))
        );
    }

    #[test]
    fn sketch_examples() {
        use PaletteColor::*;
        let grid = |cells: [PaletteColor; 9]| SpatialColorGrid(cells);
        let x = [Red, Red, Red, Blue, Blue, Blue, Green, Green, Green];
        let mut center_blue = [White; 9];
        center_blue[4] = Blue;
        let c = corpus(vec![
            with_concepts("x", &[]).with_spatial_grid(grid(x)),
            with_concepts("y", &[]).with_spatial_grid(grid(center_blue)),
            with_concepts("z", &[]).with_spatial_grid(grid([Black; 9])),
            with_concepts("nogrid", &[]),
        ]);
        let full = Sketch(x.map(Some));
        let r = sketch_search(&c, &full, 9).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["x"]);
        assert_eq!(r.entries[0].score, 9.0);

        let center = Sketch::default().set(1, 1, Blue);
        let r = sketch_search(&c, &center, 1).unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["x", "y"]);

        assert_eq!(
            sketch_search(&c, &Sketch::default(), 1),
            Err(SearchError::EmptySketch)
        );
        assert!(matches!(
            sketch_search(&c, &center, 2),
            Err(SearchError::BadMinMatch { min_match: 2, set_cells: 1 })
        ));
    }

    #[test]
    fn map_search_examples() {
        let c = corpus(
            ["faces", "texts"]
                .iter()
                .enumerate()
                .flat_map(|(j, l)| (0..3).map(move |i| with_concepts(&format!("{l}{i}{j}"), &[(l, 0.9)])))
                .collect(),
        );
        let cat = build_map_catalog(&c, &SomConfig::new(2, 2).with_epochs(1), 3, 0.5).unwrap();
        assert_eq!(map_search(&cat, "fac").unwrap(), ["concept:faces"]);
        assert_eq!(map_search(&cat, "FACES").unwrap(), ["concept:faces"]);
        assert!(map_search(&cat, "zzz").unwrap().is_empty());
        assert_eq!(
            map_search(&cat, "l").unwrap(),
            ["color:all"]
        );
        assert_eq!(map_search(&cat, "e").unwrap(), ["concept:faces", "concept:texts"]);
        assert_eq!(map_search(&cat, " "), Err(SearchError::BlankQuery));
    }

    #[test]
    fn shot_filter_restricts_to_video() {
        let c = three();
        let all = concept_search(&c, "s", 0.0, 10).unwrap();
        assert_eq!(all.len(), 3);
        // k1 and k3 land in v0, k2 in v1
        let r = shot_filter(&c, &all, "v0").unwrap();
        assert_eq!(r.ids().collect::<Vec<_>>(), ["k1", "k3"]);
        assert_eq!(r.query.feature, SearchFeature::ShotFilter);
        assert_eq!(r.query.parameters["source"], "concept_search");
        assert!(matches!(shot_filter(&c, &all, "nope"), Err(SearchError::UnknownVideo(_))));
    }

    #[test]
    fn ranked_orders_and_dedups() {
        let q = QueryDescriptor::new(SearchFeature::Sketch, []);
        let r = ResultSet::ranked(
            vec![
                ("b".to_string(), 1.0),
                ("a".to_string(), 1.0),
                ("c".to_string(), 2.0),
                ("a".to_string(), 0.5),
            ],
            q,
            10,
        );
        assert_eq!(r.ids().collect::<Vec<_>>(), ["c", "a", "b"]);
        assert!(r.is_well_ordered());
    }
}
