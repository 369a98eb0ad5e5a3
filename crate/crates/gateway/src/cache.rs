use std::path::Path;

use divex_core::corpus::Corpus;
use divex_core::som::{build_map_catalog, read_catalog, write_catalog, MapCatalog, SomConfig};
use sha2::{Digest, Sha256};

use crate::GatewayError;

/// Hex SHA-256 over the raw inputs and training parameters.
pub fn catalog_digest(
    manifest: &[u8],
    concepts: Option<&[u8]>,
    som: &SomConfig,
    min_members: usize,
    concept_threshold: f64,
) -> String {
    let mut h = Sha256::new();
    h.update((manifest.len() as u64).to_le_bytes());
    h.update(manifest);
    match concepts {
        Some(c) => {
            h.update([1]);
            h.update((c.len() as u64).to_le_bytes());
            h.update(c);
        }
        None => h.update([0]),
    }
    let params = serde_json::json!({
        "som": som,
        "min_members": min_members,
        "concept_threshold": concept_threshold,
    });
    h.update(params.to_string().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads the catalog from `cache_dir/<digest>` if present, otherwise trains
/// it and (when a cache dir is given) stores it there.
pub fn load_or_build_catalog(
    corpus: &Corpus,
    cache_dir: Option<&Path>,
    digest: &str,
    som: &SomConfig,
    min_members: usize,
    concept_threshold: f64,
) -> Result<MapCatalog, GatewayError> {
    let Some(cache_dir) = cache_dir else {
        return Ok(build_map_catalog(corpus, som, min_members, concept_threshold)?);
    };
    let dir = cache_dir.join(digest);
    if dir.join("catalog.json").exists() {
        match read_catalog(&dir) {
            Ok(cat) => {
                tracing::info!(dir = %dir.display(), maps = cat.len(), "catalog loaded from cache");
                return Ok(cat);
            }
            Err(e) => tracing::warn!(dir = %dir.display(), error = %e, "ignoring unreadable cached catalog"),
        }
    }
    let cat = build_map_catalog(corpus, som, min_members, concept_threshold)?;
    // write next to the target and rename so a crash never leaves a half catalog
    let tmp = cache_dir.join(format!(".{digest}.tmp-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&tmp);
    write_catalog(&tmp, &cat, true)?;
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::rename(&tmp, &dir)?;
    tracing::info!(dir = %dir.display(), maps = cat.len(), "catalog trained and cached");
    Ok(cat)
}
