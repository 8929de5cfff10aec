//! TOML configuration.
//!
//! A config is resolved in layers: the preset for the selected profile,
//! then the user's file merged over it key by key. Unknown keys anywhere
//! are rejected so typos fail loudly.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use ndtmc::descriptor::PartitionParams;
use ndtmc::evaluation::GroundTruthConfig;
use ndtmc::matcher::QueryParams;
use ndtmc::ndt::ShapeParams;
use ndtmc::submap::SubmapConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Kitti,
    Parking,
    /// Kitti defaults, labelled as hand-tuned.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatcherConfig {
    pub candidates: usize,
    pub threshold: f64,
    pub window_half_width: usize,
    /// Score every column shift instead of a window around the estimate.
    pub full_search: bool,
    pub exclusion_gap: u64,
    pub past_only: bool,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        let q = QueryParams::default();
        Self {
            candidates: q.candidates,
            threshold: q.threshold,
            window_half_width: q.window_half_width.unwrap_or(0),
            full_search: q.window_half_width.is_none(),
            exclusion_gap: q.exclusion_gap,
            past_only: q.past_only,
        }
    }
}

impl MatcherConfig {
    pub fn query_params(&self) -> QueryParams {
        QueryParams {
            candidates: self.candidates,
            threshold: self.threshold,
            window_half_width: (!self.full_search).then_some(self.window_half_width),
            exclusion_gap: self.exclusion_gap,
            past_only: self.past_only,
        }
    }
}

/// Fallbacks for paths not given on the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poses: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub profile: Profile,
    /// NDT voxel edge length (m).
    pub resolution: f64,
    pub partition: PartitionParams,
    pub shape: ShapeParams,
    pub matcher: MatcherConfig,
    pub submap: SubmapConfig,
    pub ground_truth: GroundTruthConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl Config {
    pub fn preset(profile: Profile) -> Self {
        let (partition, ground_truth) = match profile {
            Profile::Kitti | Profile::Custom => (PartitionParams::kitti(), GroundTruthConfig::kitti()),
            Profile::Parking => (PartitionParams::parking(), GroundTruthConfig::parking()),
        };
        Self {
            profile,
            resolution: 2.0,
            partition,
            shape: ShapeParams::default(),
            matcher: MatcherConfig::default(),
            submap: SubmapConfig::default(),
            ground_truth,
            paths: PathsConfig::default(),
        }
    }

    /// Resolves the effective config. `profile` from the command line wins
    /// over the one in the file.
    pub fn load(file: Option<&Path>, profile: Option<Profile>) -> CliResult<Self> {
        let overlay = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                Some(
                    text.parse::<toml::Table>()
                        .map_err(|e| CliError::input(format!("config {}: {e}", path.display())))?,
                )
            }
            None => None,
        };
        Self::resolve(overlay, profile).map_err(|e| match file {
            Some(path) => e.context(format!("config {}", path.display())),
            None => e,
        })
    }

    /// Parses a config from TOML text, layered over its profile preset.
    #[cfg(test)]
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let table = text
            .parse::<toml::Table>()
            .map_err(|e| CliError::input(format!("config: {e}")))?;
        Self::resolve(Some(table), None)
    }

    fn resolve(overlay: Option<toml::Table>, profile: Option<Profile>) -> CliResult<Self> {
        let file_profile = match overlay.as_ref().and_then(|t| t.get("profile")) {
            Some(v) => Some(
                Profile::deserialize(v.clone()).map_err(|e| CliError::input(format!("profile: {e}")))?,
            ),
            None => None,
        };
        let profile = profile.or(file_profile).unwrap_or(Profile::Kitti);
        let mut merged = toml::Table::try_from(Self::preset(profile)).expect("presets serialize");
        if let Some(overlay) = overlay {
            merge(&mut merged, overlay);
        }
        merged.insert("profile".into(), toml::Value::try_from(profile).expect("profile serializes"));
        let config = Self::deserialize(merged).map_err(|e| CliError::input(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(CliError::input(format!("resolution must be > 0, got {}", self.resolution)));
        }
        if self.matcher.candidates == 0 {
            return Err(CliError::input("matcher.candidates must be >= 1"));
        }
        if !self.matcher.threshold.is_finite() {
            return Err(CliError::input("matcher.threshold must be finite"));
        }
        self.partition.validate()?;
        self.shape.validate()?;
        self.submap.validate()?;
        self.ground_truth.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Recursively overlays `top` on `base`; tables merge, everything else
/// replaces.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
