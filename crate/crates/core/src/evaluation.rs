//! Train/test splitting, classification metrics, hold-out evaluation and the
//! window/overlap grid search.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{self, TrainedModel};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::pipeline::{extract_prepared, PreparedCapture};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Whole captures go to one side; overlapping chunks never straddle the split.
    ByCapture,
    /// Uniform shuffle of individual rows.
    ByChunk,
}

impl FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "by_capture" | "capture" => Ok(SplitMode::ByCapture),
            "by_chunk" | "chunk" => Ok(SplitMode::ByChunk),
            _ => Err(Error::config(format!("unknown split mode {s:?} (by-capture | by-chunk)"))),
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::ByCapture => "by_capture",
            SplitMode::ByChunk => "by_chunk",
        })
    }
}

/// Row indices of each side, in original row order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub warnings: Vec<String>,
}

pub fn split_dataset(rows: &[FeatureVector], ratio: f64, seed: u64, mode: SplitMode) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        SplitMode::ByChunk => {
            let n = rows.len();
            if n < 2 {
                return Err(Error::config("need at least 2 rows to split"));
            }
            let n_test = ((n as f64 * (1.0 - ratio)).round() as usize).clamp(1, n - 1);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut test = order[..n_test].to_vec();
            let mut train = order[n_test..].to_vec();
            test.sort_unstable();
            train.sort_unstable();
            Ok(DatasetSplit {
                train,
                test,
                warnings: Vec::new(),
            })
        }
        SplitMode::ByCapture => split_by_capture(rows, ratio, &mut rng),
    }
}

fn split_by_capture(rows: &[FeatureVector], ratio: f64, rng: &mut ChaCha8Rng) -> Result<DatasetSplit> {
    let mut capture_label: BTreeMap<&str, &str> = BTreeMap::new();
    for row in rows {
        capture_label.entry(&row.capture).or_insert(&row.label);
    }
    if capture_label.len() < 2 {
        return Err(Error::config(format!(
            "capture-level split needs at least 2 captures, found {}",
            capture_label.len()
        )));
    }
    let mut by_label: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (&capture, &label) in &capture_label {
        by_label.entry(label).or_default().push(capture);
    }

    let mut warnings = Vec::new();
    let test_share = 1.0 - ratio;
    let total = capture_label.len();
    let target = ((total as f64 * test_share).round() as usize).max(1);

    // per-label quotas by largest remainder, keeping one capture of each label for training
    let labels: Vec<&str> = by_label.keys().copied().collect();
    let capacity: Vec<usize> = labels.iter().map(|l| by_label[l].len() - 1).collect();
    let exact: Vec<f64> = labels.iter().map(|l| by_label[l].len() as f64 * test_share).collect();
    let mut quota: Vec<usize> = exact
        .iter()
        .zip(&capacity)
        .map(|(&q, &cap)| (q.floor() as usize).min(cap))
        .collect();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = quota.iter().sum();
    while assigned < target {
        let mut progressed = false;
        for &i in &order {
            if assigned == target {
                break;
            }
            if quota[i] < capacity[i] {
                quota[i] += 1;
                assigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    let mut test_captures: BTreeSet<&str> = BTreeSet::new();
    for (i, label) in labels.iter().enumerate() {
        let mut captures = by_label[label].clone();
        if captures.len() == 1 {
            let msg = format!("label {label:?} has a single capture; it stays in the training set");
            warn!("{msg}");
            warnings.push(msg);
        }
        captures.shuffle(rng);
        test_captures.extend(captures.into_iter().take(quota[i]));
    }

    let (test, train): (Vec<usize>, Vec<usize>) =
        (0..rows.len()).partition(|&i| test_captures.contains(rows[i].capture.as_str()));
    Ok(DatasetSplit { train, test, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub labels: Vec<String>,
    pub support: Vec<u64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// `confusion[i][j]`: true label `i` predicted as `j`.
    pub confusion: Vec<Vec<u64>>,
}

/// Accuracy plus macro precision/recall/F1 over the labels present in `y_true`.
pub fn compute_metrics<S: AsRef<str>, T: AsRef<str>>(
    y_true: &[S],
    y_pred: &[T],
    label_table: &[String],
) -> Result<Metrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::EmptyInput("metrics need at least one prediction"));
    }
    let index: BTreeMap<&str, usize> = label_table.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let lookup = |l: &str| {
        index
            .get(l)
            .copied()
            .ok_or_else(|| Error::format(format!("label {l:?} not in label table")))
    };
    let k = label_table.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for (t, p) in y_true.iter().zip(y_pred) {
        confusion[lookup(t.as_ref())?][lookup(p.as_ref())?] += 1;
    }

    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let support: Vec<u64> = confusion.iter().map(|row| row.iter().sum()).collect();
    let predicted: Vec<u64> = (0..k).map(|j| confusion.iter().map(|row| row[j]).sum()).collect();
    let precision: Vec<f64> = (0..k).map(|i| ratio(confusion[i][i], predicted[i])).collect();
    let recall: Vec<f64> = (0..k).map(|i| ratio(confusion[i][i], support[i])).collect();
    let f1: Vec<f64> = precision
        .iter()
        .zip(&recall)
        .map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .collect();

    let present: Vec<usize> = (0..k).filter(|&i| support[i] > 0).collect();
    let macro_avg = |v: &[f64]| present.iter().map(|&i| v[i]).sum::<f64>() / present.len() as f64;
    let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();

    Ok(Metrics {
        accuracy: correct as f64 / y_true.len() as f64,
        macro_precision: macro_avg(&precision),
        macro_recall: macro_avg(&recall),
        macro_f1: macro_avg(&f1),
        labels: label_table.to_vec(),
        support,
        precision,
        recall,
        f1,
        confusion,
    })
}

/// Result of one split → train → predict → score run.
#[derive(Debug, Clone)]
pub struct HoldoutOutcome {
    pub model: TrainedModel,
    pub metrics: Metrics,
    pub split: DatasetSplit,
    pub test_predictions: Vec<String>,
}

impl HoldoutOutcome {
    pub fn n_train(&self) -> usize {
        self.split.train.len()
    }

    pub fn n_test(&self) -> usize {
        self.split.test.len()
    }
}

pub fn run_holdout(rows: &[FeatureVector], config: &RunConfig) -> Result<HoldoutOutcome> {
    let split = split_dataset(rows, config.split_ratio, config.split_seed(), config.split_mode)?;
    if split.test.is_empty() {
        return Err(Error::config("split produced an empty test set"));
    }
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<String>) {
        idx.iter().map(|&i| (rows[i].row.clone(), rows[i].label.clone())).unzip()
    };
    let (train_x, train_y) = pick(&split.train);
    let (test_x, test_y) = pick(&split.test);

    let model = classifier::train(&train_x, &train_y, &config.forest_config())?;
    let predictions = model.predict(&test_x)?;
    let label_table: Vec<String> = model
        .label_table
        .iter()
        .chain(&test_y)
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let metrics = compute_metrics(&test_y, &predictions, &label_table)?;
    Ok(HoldoutOutcome {
        model,
        metrics,
        split,
        test_predictions: predictions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub window: f64,
    pub overlap: f64,
    pub rows: usize,
    pub chunks_dropped: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    /// Evaluated cells in `windows × overlaps` order.
    pub cells: Vec<GridCell>,
    /// `(window, overlap)` pairs rejected because overlap ≥ window.
    pub skipped: Vec<(f64, f64)>,
    /// Index into `cells` of the most accurate configuration.
    pub best: usize,
}

impl GridResult {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }
}

/// Index of the highest-accuracy cell; ties favor the smaller window, then the smaller overlap.
pub fn select_best(cells: &[GridCell]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let cur = &cells[b];
                c.metrics.accuracy > cur.metrics.accuracy
                    || (c.metrics.accuracy == cur.metrics.accuracy
                        && (c.window, c.overlap) < (cur.window, cur.overlap))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Evaluates every valid `(window, overlap)` pair with the run's fixed seed.
pub fn grid_search(
    captures: &[PreparedCapture],
    windows: &[f64],
    overlaps: &[f64],
    config: &RunConfig,
) -> Result<GridResult> {
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for &w in windows {
        for &o in overlaps {
            if o < w && w > 0.0 && o >= 0.0 {
                pairs.push((w, o));
            } else {
                info!("skipping window {w}s with overlap {o}s");
                skipped.push((w, o));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::config("grid has no valid (window, overlap) pair"));
    }

    let cells = pairs
        .par_iter()
        .map(|&(window, overlap)| {
            let cell_config = RunConfig {
                window,
                overlap,
                ..config.clone()
            };
            cell_config.validate()?;
            let extracted = extract_prepared(captures, &cell_config)?;
            let outcome = run_holdout(&extracted.rows, &cell_config)?;
            Ok(GridCell {
                window,
                overlap,
                rows: extracted.rows.len(),
                chunks_dropped: extracted.chunks_dropped,
                n_train: outcome.n_train(),
                n_test: outcome.n_test(),
                metrics: outcome.metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&cells).expect("non-empty grid");
    Ok(GridResult { cells, skipped, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(s: &str) -> Vec<String> {
        s.chars().map(|c| c.to_string()).collect()
    }

    fn rows(captures: usize, per_capture: usize, n_labels: usize) -> Vec<FeatureVector> {
        (0..captures)
            .flat_map(|c| {
                (0..per_capture).map(move |k| FeatureVector {
                    row: vec![c as f64],
                    label: format!("L{}", c % n_labels),
                    capture: format!("cap{c:02}"),
                    chunk_start: k as f64 * 10.0,
                })
            })
            .collect()
    }

    #[test]
    fn identity_predictions() {
        let y = labels("ABAB");
        let m = compute_metrics(&y, &y, &labels("AB")).unwrap();
        assert_eq!((m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn symmetric_confusion() {
        let t = labels("AAAABBBB");
        let p = labels("AAABABBB");
        let m = compute_metrics(&t, &p, &labels("AB")).unwrap();
        assert_eq!(m.confusion, vec![vec![3, 1], vec![1, 3]]);
        assert_eq!((m.accuracy, m.macro_precision, m.macro_recall), (0.75, 0.75, 0.75));
    }

    #[test]
    fn constant_predictor() {
        let m = compute_metrics(&labels("AABB"), &labels("AAAA"), &labels("AB")).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.macro_recall, 0.5);
        assert_eq!(m.precision, vec![0.5, 0.0]);
        assert_eq!(m.macro_precision, 0.25);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(
            compute_metrics(&labels("AB"), &labels("A"), &labels("AB")),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(compute_metrics(&labels("C"), &labels("A"), &labels("AB")).is_err());
    }

    #[test]
    fn ten_captures_split_eight_two() {
        let data = rows(10, 3, 1);
        let s = split_dataset(&data, 0.8, 7, SplitMode::ByCapture).unwrap();
        let caps = |idx: &[usize]| idx.iter().map(|&i| data[i].capture.clone()).collect::<BTreeSet<_>>();
        let (train, test) = (caps(&s.train), caps(&s.test));
        assert_eq!((train.len(), test.len()), (8, 2));
        assert!(train.is_disjoint(&test));
        assert_eq!(s, split_dataset(&data, 0.8, 7, SplitMode::ByCapture).unwrap());
    }

    #[test]
    fn stratified_over_labels() {
        let data = rows(20, 2, 2);
        let s = split_dataset(&data, 0.8, 1, SplitMode::ByCapture).unwrap();
        let test_caps: BTreeSet<_> = s.test.iter().map(|&i| (&data[i].label, &data[i].capture)).collect();
        let per_label = |l: &str| test_caps.iter().filter(|(lab, _)| lab.as_str() == l).count();
        assert_eq!((per_label("L0"), per_label("L1")), (2, 2));
    }

    #[test]
    fn single_capture_label_warns() {
        let mut data = rows(6, 2, 1);
        data.push(FeatureVector {
            row: vec![0.0],
            label: "rare".into(),
            capture: "lonely".into(),
            chunk_start: 0.0,
        });
        let s = split_dataset(&data, 0.8, 3, SplitMode::ByCapture).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert!(s.train.contains(&(data.len() - 1)));
    }

    #[test]
    fn chunk_split_counts() {
        let data = rows(100, 1, 2);
        let s = split_dataset(&data, 0.8, 9, SplitMode::ByChunk).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (80, 20));
    }

    #[test]
    fn best_cell_tie_breaking() {
        let m = |accuracy| Metrics {
            accuracy,
            macro_precision: 0.0,
            macro_recall: 0.0,
            macro_f1: 0.0,
            labels: vec![],
            support: vec![],
            precision: vec![],
            recall: vec![],
            f1: vec![],
            confusion: vec![],
        };
        let cell = |window, overlap, acc| GridCell {
            window,
            overlap,
            rows: 0,
            chunks_dropped: 0,
            n_train: 0,
            n_test: 0,
            metrics: m(acc),
        };
        let cells = vec![cell(30.0, 2.0, 0.9), cell(10.0, 2.0, 0.95), cell(10.0, 1.0, 0.95), cell(30.0, 1.0, 0.8)];
        assert_eq!(select_best(&cells), Some(2));
    }
}
