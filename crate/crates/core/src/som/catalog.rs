use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{assign_keyframes, train_som, Metric, SomConfig, SomError, SomModel};
use crate::corpus::Corpus;

/// Minimum member count for a concept to get its own map.
pub const DEFAULT_MIN_MEMBERS: usize = 576;
/// Score a keyframe needs to count as a member of a concept.
pub const DEFAULT_CONCEPT_THRESHOLD: f64 = 0.5;

pub const COLOR_MAP_ID: &str = "color:all";
pub const COLOR_MAP_TITLE: &str = "all — color";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Color,
    Concept,
}

/// A trained map with its keyframes placed on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub id: String,
    pub title: String,
    pub kind: MapKind,
    pub concept_label: Option<String>,
    /// Concept labels spanning the weight space of a concept map, in order.
    /// `None` for color maps, whose weights are 216-bin histograms.
    pub feature_labels: Option<Vec<String>>,
    pub model: SomModel,
    /// One member list per grid unit; the first id is the representative.
    pub cells: Vec<Vec<String>>,
}

impl FeatureMap {
    pub fn width(&self) -> usize {
        self.model.config().width
    }

    pub fn height(&self) -> usize {
        self.model.config().height
    }

    pub fn member_count(&self) -> usize {
        self.cells.iter().map(Vec::len).sum()
    }

    pub fn representative(&self, cell: usize) -> Option<&str> {
        self.cells.get(cell)?.first().map(String::as_str)
    }

    /// Cell holding `keyframe_id`, if it is a member.
    pub fn cell_of(&self, keyframe_id: &str) -> Option<usize> {
        self.cells
            .iter()
            .position(|c| c.iter().any(|id| id == keyframe_id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapCatalog {
    /// Color map first, then concept maps in label order.
    pub maps: Vec<FeatureMap>,
    pub min_members: usize,
    pub concept_threshold: f64,
}

impl MapCatalog {
    pub fn get(&self, id: &str) -> Option<&FeatureMap> {
        self.maps.iter().find(|m| m.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.maps.iter().map(|m| m.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

fn concept_map(
    corpus: &Corpus,
    label: &str,
    members: Vec<usize>,
    config: &SomConfig,
) -> Result<FeatureMap, SomError> {
    // Restricting the space to labels the members actually carry leaves
    // cosine distances unchanged: the dropped dimensions are zero in every
    // sample and therefore in every initialized and trained weight.
    let kfs: Vec<_> = members.iter().map(|&i| &corpus.keyframes()[i]).collect();
    let mut labels: Vec<String> = kfs
        .iter()
        .flat_map(|k| k.concepts.labels().map(str::to_string))
        .collect();
    labels.sort();
    labels.dedup();
    let samples: Vec<(String, Vec<f64>)> = kfs
        .iter()
        .map(|k| (k.id.clone(), k.concepts.project(&labels)))
        .collect();
    let vectors: Vec<&[f64]> = samples.iter().map(|(_, v)| v.as_slice()).collect();
    let config = config.clone().with_metric(Metric::Cosine);
    let model = train_som(&vectors, &config)?;
    let cells = assign_keyframes(&model, &samples)?;
    Ok(FeatureMap {
        id: format!("concept:{label}"),
        title: label.to_string(),
        kind: MapKind::Concept,
        concept_label: Some(label.to_string()),
        feature_labels: Some(labels),
        model,
        cells,
    })
}

/// Builds the color map over every keyframe plus one concept map for each
/// label with at least `min_members` keyframes scoring `>= concept_threshold`.
///
/// The color map is trained on histograms with the L1 metric; concept maps
/// on concept vectors with the cosine metric. Maps are independent and are
/// trained in parallel; the result does not depend on scheduling.
pub fn build_map_catalog(
    corpus: &Corpus,
    config: &SomConfig,
    min_members: usize,
    concept_threshold: f64,
) -> Result<MapCatalog, SomError> {
    let qualifying: Vec<(&str, Vec<usize>)> = corpus
        .concept_labels()
        .iter()
        .filter_map(|label| {
            let members: Vec<usize> = corpus
                .keyframes()
                .iter()
                .enumerate()
                .filter(|(_, k)| k.concepts.get(label).is_some_and(|s| s >= concept_threshold))
                .map(|(i, _)| i)
                .collect();
            (!members.is_empty() && members.len() >= min_members).then_some((label.as_str(), members))
        })
        .collect();

    let color = || -> Result<FeatureMap, SomError> {
        let samples: Vec<(String, &[f64])> = corpus
            .keyframes()
            .iter()
            .map(|k| (k.id.clone(), k.histogram.bins()))
            .collect();
        let vectors: Vec<&[f64]> = samples.iter().map(|(_, v)| *v).collect();
        let config = config.clone().with_metric(Metric::L1);
        let model = train_som(&vectors, &config)?;
        let cells = assign_keyframes(&model, &samples)?;
        Ok(FeatureMap {
            id: COLOR_MAP_ID.to_string(),
            title: COLOR_MAP_TITLE.to_string(),
            kind: MapKind::Color,
            concept_label: None,
            feature_labels: None,
            model,
            cells,
        })
    };

    let (color_map, concept_maps) = rayon::join(color, || {
        qualifying
            .into_par_iter()
            .map(|(label, members)| concept_map(corpus, label, members, config))
            .collect::<Result<Vec<_>, _>>()
    });

    let mut maps = vec![color_map?];
    maps.extend(concept_maps?);
    Ok(MapCatalog {
        maps,
        min_members,
        concept_threshold,
    })
}
