//! Bundled experiment presets.

use crate::error::Result;
use crate::harness::config::ExperimentConfig;

pub const CLUSTERS_2D_TOML: &str = include_str!("../../presets/clusters_2d.toml");
pub const SEQUENCES_TOML: &str = include_str!("../../presets/sequences.toml");

/// Four classes in the plane, uniform-box outlier exposure, ring, shifted
/// Gaussian, clipped Gaussian noise and Rademacher test outliers.
pub fn clusters_2d() -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml_str(CLUSTERS_2D_TOML)
}

/// Markov-chain sequences modeled autoregressively, with blocky outlier
/// exposure sequences and constant, periodic, long-run and uniform test
/// outliers.
pub fn sequences() -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml_str(SEQUENCES_TOML)
}

/// Looks a preset up by name.
pub fn by_name(name: &str) -> Option<Result<ExperimentConfig>> {
    match name {
        "clusters_2d" => Some(clusters_2d()),
        "sequences" => Some(sequences()),
        _ => None,
    }
}

pub const NAMES: [&str; 2] = ["clusters_2d", "sequences"];
