//! On-disk catalog: `catalog.json` (an index) plus one JSON document per map
//! under `maps/`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureMap, MapCatalog, MapKind, Metric, SomConfig, SomError, SomModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MapExport {
    pub id: String,
    pub title: String,
    pub kind: MapKind,
    pub concept_label: Option<String>,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CatalogIndex {
    pub config: SomConfig,
    pub min_members: usize,
    pub concept_threshold: f64,
    /// Map ids in catalog order with their file names under `maps/`.
    pub maps: Vec<(String, String)>,
}

impl FeatureMap {
    pub fn to_export(&self, include_weights: bool) -> MapExport {
        MapExport {
            id: self.id.clone(),
            title: self.title.clone(),
            kind: self.kind,
            concept_label: self.concept_label.clone(),
            width: self.width(),
            height: self.height(),
            cells: self.cells.clone(),
            feature_labels: self.feature_labels.clone(),
            weights: include_weights.then(|| self.model.weights().map(<[f64]>::to_vec).collect()),
        }
    }

    /// Rebuilds a map from an export that carries weights. The grid size
    /// comes from the export, the metric from its kind.
    pub fn from_export(export: MapExport, config: &SomConfig) -> Result<Self, SomError> {
        let invalid = |msg: String| SomError::InvalidExport(format!("{}: {msg}", export.id));
        if (export.kind == MapKind::Concept) != export.concept_label.is_some() {
            return Err(invalid("concept label must be present exactly for concept maps".into()));
        }
        let Some(weights) = export.weights else {
            return Err(invalid("weights missing".into()));
        };
        if export.cells.len() != export.width * export.height {
            return Err(invalid(format!(
                "{} cells for a {}x{} grid",
                export.cells.len(),
                export.width,
                export.height
            )));
        }
        let metric = match export.kind {
            MapKind::Color => Metric::L1,
            MapKind::Concept => Metric::Cosine,
        };
        let mut cfg = config.clone().with_metric(metric);
        cfg.width = export.width;
        cfg.height = export.height;
        Ok(FeatureMap {
            model: SomModel::from_weights(cfg, weights)?,
            id: export.id,
            title: export.title,
            kind: export.kind,
            concept_label: export.concept_label,
            feature_labels: export.feature_labels,
            cells: export.cells,
        })
    }
}

fn file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    // sanitizing can collide ("a:b" vs "a_b"); a short hash keeps names unique
    let h = id
        .bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
    format!("{safe}-{:08x}.json", h as u32)
}

/// Writes the catalog under `dir`. Weights are needed to reload it.
pub fn write_catalog(dir: &Path, catalog: &MapCatalog, include_weights: bool) -> Result<(), SomError> {
    let maps_dir = dir.join("maps");
    std::fs::create_dir_all(&maps_dir)?;
    let mut entries = Vec::with_capacity(catalog.len());
    for map in &catalog.maps {
        let name = file_name(&map.id);
        let json = serde_json::to_vec(&map.to_export(include_weights))
            .map_err(|e| SomError::InvalidExport(e.to_string()))?;
        std::fs::write(maps_dir.join(&name), json)?;
        entries.push((map.id.clone(), name));
    }
    let config = catalog
        .maps
        .first()
        .map(|m| m.model.config().clone().with_metric(Metric::Euclidean))
        .unwrap_or_default();
    let index = CatalogIndex {
        config,
        min_members: catalog.min_members,
        concept_threshold: catalog.concept_threshold,
        maps: entries,
    };
    let json = serde_json::to_vec_pretty(&index).map_err(|e| SomError::InvalidExport(e.to_string()))?;
    std::fs::write(dir.join("catalog.json"), json)?;
    Ok(())
}

pub fn read_catalog(dir: &Path) -> Result<MapCatalog, SomError> {
    let parse_err = |e: serde_json::Error| SomError::InvalidExport(e.to_string());
    let index: CatalogIndex =
        serde_json::from_slice(&std::fs::read(dir.join("catalog.json"))?).map_err(parse_err)?;
    let mut maps = Vec::with_capacity(index.maps.len());
    for (id, name) in &index.maps {
        let export: MapExport =
            serde_json::from_slice(&std::fs::read(dir.join("maps").join(name))?).map_err(parse_err)?;
        if &export.id != id {
            return Err(SomError::InvalidExport(format!(
                "{name} holds map {:?}, index says {id:?}",
                export.id
            )));
        }
        maps.push(FeatureMap::from_export(export, &index.config)?);
    }
    Ok(MapCatalog {
        maps,
        min_members: index.min_members,
        concept_threshold: index.concept_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colorfeat::{ConceptVector, Histogram216};
    use crate::corpus::{Corpus, Keyframe, Shot};
    use crate::som::build_map_catalog;

    fn small_catalog() -> MapCatalog {
        let n = 8;
        let shots = (0..n)
            .map(|i| Shot {
                video_id: "v".into(),
                shot_index: i,
                start_frame: i as u64,
                end_frame: i as u64,
                keyframe_id: format!("k{i}"),
            })
            .collect();
        let kfs = (0..n)
            .map(|i| {
                let cv = ConceptVector::from_scores([("faces", 0.6 + 0.05 * i as f64), ("sky", 0.3)])
                    .unwrap();
                Keyframe::from_histogram(format!("k{i}"), "v", i, 0.0, Histogram216::one_hot(i as usize * 7))
                    .with_concepts(cv)
            })
            .collect();
        let corpus = Corpus::from_parts(vec!["v".into()], shots, kfs).unwrap();
        build_map_catalog(&corpus, &SomConfig::new(3, 2).with_epochs(2), 4, 0.5).unwrap()
    }

    #[test]
    fn export_shape() {
        let cat = small_catalog();
        let json = serde_json::to_value(cat.maps[1].to_export(false)).unwrap();
        assert_eq!(json["id"], "concept:faces");
        assert_eq!(json["kind"], "concept");
        assert_eq!(json["conceptLabel"], "faces");
        assert_eq!(json["width"], 3);
        assert_eq!(json["height"], 2);
        assert_eq!(json["cells"].as_array().unwrap().len(), 6);
        assert!(json.get("weights").is_none());
        let color = serde_json::to_value(cat.maps[0].to_export(true)).unwrap();
        assert!(color["conceptLabel"].is_null());
        assert_eq!(color["weights"].as_array().unwrap().len(), 6);
    }

    #[test]
    fn write_then_read() {
        let cat = small_catalog();
        let dir = tempfile::tempdir().unwrap();
        write_catalog(dir.path(), &cat, true).unwrap();
        assert_eq!(read_catalog(dir.path()).unwrap(), cat);
    }

    #[test]
    fn weightless_export_cannot_be_reloaded() {
        let cat = small_catalog();
        let dir = tempfile::tempdir().unwrap();
        write_catalog(dir.path(), &cat, false).unwrap();
        assert!(matches!(read_catalog(dir.path()), Err(SomError::InvalidExport(_))));
    }

    #[test]
    fn file_names_do_not_collide() {
        assert_ne!(file_name("concept:a_b"), file_name("concept:a:b"));
    }
}
