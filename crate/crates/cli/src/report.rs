//! TOML reports and the grid CSV.

use std::io::Write;

use serde::Serialize;

use interflow::config::{RunConfig, TOOL_NAME, TOOL_VERSION};
use interflow::evaluation::{GridResult, HoldoutOutcome, Metrics};
use interflow::features::feature_dim;
use interflow::pipeline::{format_sig9, header_lines};
use interflow::{Error, Result};

#[derive(Debug, Serialize)]
pub struct TrainReport {
    pub tool: String,
    pub version: String,
    pub feature_dim: usize,
    pub rows: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub split_warnings: Vec<String>,
    pub metrics: Metrics,
    pub config: RunConfig,
}

impl TrainReport {
    pub fn new(config: &RunConfig, outcome: &HoldoutOutcome, rows: usize) -> Self {
        TrainReport {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            feature_dim: feature_dim(config.n_bins),
            rows,
            n_train: outcome.n_train(),
            n_test: outcome.n_test(),
            split_warnings: outcome.split.warnings.clone(),
            metrics: outcome.metrics.clone(),
            config: config.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

#[derive(Debug, Serialize)]
pub struct BestReport {
    pub tool: String,
    pub version: String,
    pub window: f64,
    pub overlap: f64,
    pub cells: usize,
    /// `[window, overlap]` pairs rejected because overlap ≥ window
    pub skipped: Vec<[f64; 2]>,
    pub rows: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Metrics,
    pub config: RunConfig,
}

impl BestReport {
    pub fn new(config: &RunConfig, result: &GridResult) -> Self {
        let best = result.best_cell();
        BestReport {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            window: best.window,
            overlap: best.overlap,
            cells: result.cells.len(),
            skipped: result.skipped.iter().map(|&(w, o)| [w, o]).collect(),
            rows: best.rows,
            n_train: best.n_train,
            n_test: best.n_test,
            metrics: best.metrics.clone(),
            config: config.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

pub fn write_grid_csv<W: Write>(mut out: W, result: &GridResult, config: &RunConfig) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Format(format!("writing grid: {e}"));
    out.write_all(header_lines(config).as_bytes()).map_err(io_err)?;
    let mut wtr = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Format(format!("writing grid: {e}"));
    wtr.write_record([
        "window",
        "overlap",
        "rows",
        "chunks_dropped",
        "n_train",
        "n_test",
        "accuracy",
        "macro_precision",
        "macro_recall",
        "macro_f1",
    ])
    .map_err(csv_err)?;
    for c in &result.cells {
        let m = &c.metrics;
        wtr.write_record([
            format_sig9(c.window),
            format_sig9(c.overlap),
            c.rows.to_string(),
            c.chunks_dropped.to_string(),
            c.n_train.to_string(),
            c.n_test.to_string(),
            m.accuracy.to_string(),
            m.macro_precision.to_string(),
            m.macro_recall.to_string(),
            m.macro_f1.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(io_err)
}
