//! Scenarios shipped in the repository's `scenarios/` directory.

use crate::config::ScenarioConfig;
use crate::error::{ExperimentError, Result};

const SCENARIOS: &[(&str, &str)] = &[
    ("example1", include_str!("../../../scenarios/example1.toml")),
    ("example2", include_str!("../../../scenarios/example2.toml")),
    ("general_convex", include_str!("../../../scenarios/general_convex.toml")),
    ("payment_decay", include_str!("../../../scenarios/payment_decay.toml")),
    ("strongly_convex", include_str!("../../../scenarios/strongly_convex.toml")),
    ("threeway", include_str!("../../../scenarios/threeway.toml")),
    ("utility_sweep", include_str!("../../../scenarios/utility_sweep.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    SCENARIOS.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<ScenarioConfig> {
    let text = source(name).ok_or_else(|| ExperimentError::UnknownScenario(name.to_string()))?;
    ScenarioConfig::from_toml(text)
}

/// A built-in name, or else a path to a TOML file.
pub fn resolve(name_or_path: &str) -> Result<ScenarioConfig> {
    if let Some(text) = source(name_or_path) {
        return ScenarioConfig::from_toml(text);
    }
    let path = std::path::Path::new(name_or_path);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        return ScenarioConfig::from_toml(&text);
    }
    Err(ExperimentError::UnknownScenario(name_or_path.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_match_files() {
        for name in names() {
            assert_eq!(load(name).unwrap().name, name);
        }
        assert!(matches!(load("nope"), Err(ExperimentError::UnknownScenario(_))));
    }
}
