use std::path::PathBuf;

use mbs_core::{parse_model, ModelDefinition};

pub fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("..")
        .join("..")
        .join("models")
}

pub fn load_model(name: &str) -> ModelDefinition {
    let path = models_dir().join(name);
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    parse_model(&text).unwrap_or_else(|e| panic!("parsing {name}: {e}"))
}

/// Shortens a model's horizon for cheap gradient checks.
#[allow(dead_code)]
pub fn with_duration(mut model: ModelDefinition, duration: f64) -> ModelDefinition {
    model.simulation.duration = duration;
    model
}
