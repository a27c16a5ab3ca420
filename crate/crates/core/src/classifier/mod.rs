//! Deterministic random forest.
//!
//! Tree `i` draws its bootstrap sample and per-node feature subsets from a
//! ChaCha8 generator keyed by the forest seed and positioned on stream `i`,
//! so trees can be grown in parallel and still reproduce byte-for-byte.

pub mod tree;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use self::tree::Node;
use self::tree::{GrowParams, TrainingSet};

pub const FORMAT_VERSION: u32 = 1;
/// Nested tree records are limited by the JSON reader's recursion depth.
pub const MAX_TREE_DEPTH: usize = 100;

/// How many features to examine at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeaturesPerSplit {
    /// `ceil(sqrt(dim))`
    Sqrt,
    All,
    Fixed(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(self, dim: usize) -> usize {
        let k = match self {
            FeaturesPerSplit::Sqrt => (dim as f64).sqrt().ceil() as usize,
            FeaturesPerSplit::All => dim,
            FeaturesPerSplit::Fixed(k) => k,
        };
        k.clamp(1, dim.max(1))
    }
}

impl FromStr for FeaturesPerSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sqrt" => Ok(FeaturesPerSplit::Sqrt),
            "all" => Ok(FeaturesPerSplit::All),
            other => match other.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(FeaturesPerSplit::Fixed(k)),
                _ => Err(Error::config(format!(
                    "features per split must be `sqrt`, `all` or a positive integer, got {s:?}"
                ))),
            },
        }
    }
}

impl TryFrom<String> for FeaturesPerSplit {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeaturesPerSplit> for String {
    fn from(f: FeaturesPerSplit) -> String {
        f.to_string()
    }
}

impl fmt::Display for FeaturesPerSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeaturesPerSplit::Sqrt => f.write_str("sqrt"),
            FeaturesPerSplit::All => f.write_str("all"),
            FeaturesPerSplit::Fixed(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub features_per_split: FeaturesPerSplit,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 32,
            min_samples_split: 2,
            features_per_split: FeaturesPerSplit::Sqrt,
            seed: 0,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_samples_split == 0 {
            return Err(Error::config("tree count, max depth and min samples per split must all be at least 1"));
        }
        if self.max_depth > MAX_TREE_DEPTH {
            return Err(Error::config(format!("max depth is limited to {MAX_TREE_DEPTH}")));
        }
        if let FeaturesPerSplit::Fixed(0) = self.features_per_split {
            return Err(Error::config("features per split must be positive"));
        }
        Ok(())
    }
}

/// The generator for tree `tree_index` of a forest seeded with `seed`.
pub fn tree_rng(seed: u64, tree_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree_index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub config: ForestConfig,
    pub label_table: Vec<String>,
    pub feature_dim: usize,
    pub trees: Vec<Node>,
    /// Free-form provenance (run configuration, tool version).
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metadata: serde_json::Value,
}

pub fn train(rows: &[Vec<f64>], labels: &[String], config: &ForestConfig) -> Result<TrainedModel> {
    config.validate()?;
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    if rows.len() < 2 {
        return Err(Error::EmptyInput("training needs at least 2 rows"));
    }
    let feature_dim = rows[0].len();
    if feature_dim == 0 {
        return Err(Error::EmptyInput("training rows have no features"));
    }
    for row in rows {
        if row.len() != feature_dim {
            return Err(Error::DimensionMismatch {
                expected: feature_dim,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("training rows contain non-finite values"));
        }
    }
    let label_table: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if label_table.len() < 2 {
        return Err(Error::DegenerateLabels(label_table.len()));
    }
    let label_ids: Vec<usize> = labels
        .iter()
        .map(|l| label_table.binary_search(l).expect("label in table"))
        .collect();

    let data = TrainingSet {
        rows,
        labels: &label_ids,
        n_labels: label_table.len(),
    };
    let params = GrowParams {
        max_depth: config.max_depth,
        min_samples_split: config.min_samples_split,
        features_per_node: config.features_per_split.resolve(feature_dim),
    };
    let n = rows.len();
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(config.seed, t);
            let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            tree::grow(&data, sample, &params, &mut rng)
        })
        .collect();

    Ok(TrainedModel {
        format_version: FORMAT_VERSION,
        config: *config,
        label_table,
        feature_dim,
        trees,
        metadata: serde_json::Value::Null,
    })
}

impl TrainedModel {
    fn check_dim(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                found: row.len(),
            });
        }
        Ok(())
    }

    /// Leaf histograms summed over all trees, indexed like `label_table`.
    pub fn votes(&self, row: &[f64]) -> Result<Vec<u64>> {
        self.check_dim(row)?;
        let mut total = vec![0u64; self.label_table.len()];
        for tree in &self.trees {
            for (t, c) in total.iter_mut().zip(tree.leaf_for(row)) {
                *t += c;
            }
        }
        Ok(total)
    }

    pub fn vote_fractions(&self, row: &[f64]) -> Result<Vec<f64>> {
        let votes = self.votes(row)?;
        let sum: u64 = votes.iter().sum();
        Ok(votes.iter().map(|&v| v as f64 / sum as f64).collect())
    }

    /// Argmax of the summed histograms; ties go to the earlier label.
    pub fn predict_row(&self, row: &[f64]) -> Result<&str> {
        let votes = self.votes(row)?;
        let mut best = 0;
        for (i, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = i;
            }
        }
        Ok(&self.label_table[best])
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<String>> {
        rows.iter()
            .map(|r| self.predict_row(r).map(str::to_string))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| Error::ModelCorrupt(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::ModelCorrupt("missing format_version".into()))?;
        if version != FORMAT_VERSION as u64 {
            return Err(Error::ModelVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let model: TrainedModel =
            serde_json::from_value(value).map_err(|e| Error::ModelCorrupt(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let corrupt = |msg: String| Err(Error::ModelCorrupt(msg));
        if self.label_table.len() < 2 {
            return corrupt("label table has fewer than 2 labels".into());
        }
        if self.trees.is_empty() {
            return corrupt("model has no trees".into());
        }
        let n_labels = self.label_table.len();
        let mut problem = None;
        for tree in &self.trees {
            tree.visit(&mut |node| match node {
                Node::Split { feature, threshold, .. } => {
                    if *feature >= self.feature_dim || !threshold.is_finite() {
                        problem.get_or_insert(format!("bad split on feature {feature}"));
                    }
                }
                Node::Leaf { counts } => {
                    if counts.len() != n_labels || counts.iter().all(|&c| c == 0) {
                        problem.get_or_insert("empty or mis-sized leaf histogram".to_string());
                    }
                }
            });
        }
        match problem {
            Some(msg) => corrupt(msg),
            None => Ok(()),
        }
    }
}

pub fn predict(model: &TrainedModel, rows: &[Vec<f64>]) -> Result<Vec<String>> {
    model.predict(rows)
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    TrainedModel::from_json(&bytes)
}
