use std::path::{Path, PathBuf};

use divex_core::colorfeat::DEFAULT_COVERAGE_THETA;
use divex_core::som::{SomConfig, DEFAULT_CONCEPT_THRESHOLD, DEFAULT_MIN_MEMBERS};
use serde::{Deserialize, Serialize};

use crate::GatewayError;

/// Service configuration, read from one JSON file. Relative paths are
/// resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub manifest: PathBuf,
    #[serde(default)]
    pub concepts: Option<PathBuf>,
    #[serde(default)]
    pub tasks: Option<PathBuf>,
    /// Directory for trained catalogs, one subdirectory per input digest.
    #[serde(default)]
    pub catalog_cache: Option<PathBuf>,
    #[serde(default)]
    pub score_log: Option<PathBuf>,
    #[serde(default)]
    pub usage_log: Option<PathBuf>,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default)]
    pub som: SomConfig,
    #[serde(default = "default_min_members")]
    pub min_members: usize,
    #[serde(default = "default_concept_threshold")]
    pub concept_threshold: f64,
    #[serde(default = "default_coverage_theta")]
    pub coverage_theta: f64,
    /// Minimum label score for concept search matches.
    #[serde(default)]
    pub concept_theta: f64,
    #[serde(default = "default_result_limit")]
    pub result_limit: usize,
    #[serde(default = "default_similarity_k")]
    pub similarity_k: usize,
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}
fn default_min_members() -> usize {
    DEFAULT_MIN_MEMBERS
}
fn default_concept_threshold() -> f64 {
    DEFAULT_CONCEPT_THRESHOLD
}
fn default_coverage_theta() -> f64 {
    DEFAULT_COVERAGE_THETA
}
fn default_result_limit() -> usize {
    1000
}
fn default_similarity_k() -> usize {
    50
}

impl ServiceConfig {
    /// Config with defaults for everything but the manifest.
    pub fn new(manifest: impl Into<PathBuf>) -> Self {
        serde_json::from_value(serde_json::json!({ "manifest": manifest.into() }))
            .expect("defaults deserialize")
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ServiceConfig =
            serde_json::from_str(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.manifest);
        for p in [
            &mut self.concepts,
            &mut self.tasks,
            &mut self.catalog_cache,
            &mut self.score_log,
            &mut self.usage_log,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }
}
