use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ipnet::IpNet;
use serde::{Deserialize, Serialize};

use crate::chunking::validate_window;
use crate::classifier::{FeaturesPerSplit, ForestConfig};
use crate::error::{Error, Result};
use crate::evaluation::SplitMode;
use crate::features::FeatureConfig;
use crate::ingest::{IngestConfig, DEFAULT_FILTERED_PORTS};
use crate::signal::SignalConfig;

pub const TOOL_NAME: &str = "interflow";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Every knob of a pipeline run. Echoed into each artifact the run writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub window: f64,
    pub overlap: f64,
    pub delta: f64,
    pub n_bins: usize,
    pub min_packets: usize,
    pub filtered_ports: BTreeSet<u16>,
    pub local_endpoint: Option<IpNet>,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub features_per_split: FeaturesPerSplit,
    pub split_mode: SplitMode,
    pub split_ratio: f64,
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let forest = ForestConfig::default();
        let signal = SignalConfig::default();
        RunConfig {
            window: 30.0,
            overlap: 10.0,
            delta: signal.delta,
            n_bins: signal.n_bins,
            min_packets: 1,
            filtered_ports: DEFAULT_FILTERED_PORTS.into_iter().collect(),
            local_endpoint: None,
            n_trees: forest.n_trees,
            max_depth: forest.max_depth,
            min_samples_split: forest.min_samples_split,
            features_per_split: forest.features_per_split,
            split_mode: SplitMode::ByCapture,
            split_ratio: 0.8,
            seed: 42,
            manifest: None,
            features: None,
            model: None,
            report_dir: None,
        }
    }
}

/// Stage identifiers mixed into the global seed.
pub mod stage {
    pub const SPLIT: u64 = 1;
    pub const FOREST: u64 = 2;
    pub const SYNTH: u64 = 3;
}

/// SplitMix64 over `seed` and a stream identifier.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The subset of [`RunConfig`] that shapes feature rows. A model only
/// accepts rows extracted with identical settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSettings {
    pub window: f64,
    pub overlap: f64,
    pub delta: f64,
    pub n_bins: usize,
    pub min_packets: usize,
    pub filtered_ports: BTreeSet<u16>,
    pub local_endpoint: Option<IpNet>,
}

impl ExtractionSettings {
    /// Human-readable `field: ours vs theirs` lines for every differing field.
    pub fn diff(&self, other: &ExtractionSettings) -> Vec<String> {
        let as_map = |s: &ExtractionSettings| -> BTreeMap<String, serde_json::Value> {
            match serde_json::to_value(s).expect("settings serialize") {
                serde_json::Value::Object(m) => m.into_iter().collect(),
                _ => unreachable!(),
            }
        };
        let (a, b) = (as_map(self), as_map(other));
        a.iter()
            .filter(|(k, v)| b.get(*k) != Some(*v))
            .map(|(k, v)| format!("{k}: {v} vs {}", b.get(k).cloned().unwrap_or_default()))
            .collect()
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        validate_window(self.window, self.overlap)?;
        self.signal_config().validate()?;
        self.forest_config().validate()?;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::config(format!("split ratio must be in (0, 1), got {}", self.split_ratio)));
        }
        if self.min_packets == 0 {
            return Err(Error::config("min packets must be at least 1"));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Single-line JSON form used in artifact headers.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn ingest_config(&self) -> IngestConfig {
        IngestConfig {
            filtered_ports: self.filtered_ports.clone(),
            local_endpoint: self.local_endpoint,
        }
    }

    pub fn signal_config(&self) -> SignalConfig {
        SignalConfig {
            delta: self.delta,
            n_bins: self.n_bins,
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            signal: self.signal_config(),
        }
    }

    pub fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            features_per_split: self.features_per_split,
            seed: derive_seed(self.seed, stage::FOREST),
        }
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, stage::SPLIT)
    }

    pub fn extraction(&self) -> ExtractionSettings {
        ExtractionSettings {
            window: self.window,
            overlap: self.overlap,
            delta: self.delta,
            n_bins: self.n_bins,
            min_packets: self.min_packets,
            filtered_ports: self.filtered_ports.clone(),
            local_endpoint: self.local_endpoint,
        }
    }

    pub fn with_extraction(mut self, e: &ExtractionSettings) -> Self {
        self.window = e.window;
        self.overlap = e.overlap;
        self.delta = e.delta;
        self.n_bins = e.n_bins;
        self.min_packets = e.min_packets;
        self.filtered_ports = e.filtered_ports.clone();
        self.local_endpoint = e.local_endpoint;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_partial_files() {
        let config = RunConfig {
            local_endpoint: Some("10.0.0.0/8".parse().unwrap()),
            features_per_split: FeaturesPerSplit::Fixed(9),
            manifest: Some("data/manifest.csv".into()),
            ..Default::default()
        };
        assert_eq!(RunConfig::from_toml_str(&config.to_toml()).unwrap(), config);

        let partial = RunConfig::from_toml_str("window = 80.0\noverlap = 30.0\n").unwrap();
        assert_eq!((partial.window, partial.overlap, partial.n_bins), (80.0, 30.0, 60));
        assert!(RunConfig::from_toml_str("windw = 3").is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let bad = RunConfig {
            overlap: 30.0,
            ..Default::default()
        };
        assert!(bad.validate().unwrap_err().is_config());
        let bad = RunConfig {
            n_bins: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn seeds_differ_by_stage() {
        assert_ne!(derive_seed(42, stage::SPLIT), derive_seed(42, stage::FOREST));
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }

    #[test]
    fn extraction_diff_names_fields() {
        let a = RunConfig::default().extraction();
        let b = RunConfig {
            n_bins: 32,
            ..Default::default()
        }
        .extraction();
        assert_eq!(a.diff(&b), vec!["n_bins: 60 vs 32".to_string()]);
        assert!(a.diff(&a).is_empty());
    }
}
