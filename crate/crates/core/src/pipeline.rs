//! End-to-end stages shared by the CLI and the test suites: capture
//! preparation, chunk feature extraction, and the features / predictions
//! CSV formats.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chunking::make_chunks;
use crate::classifier::TrainedModel;
use crate::config::{ExtractionSettings, RunConfig, TOOL_NAME, TOOL_VERSION};
use crate::error::{Error, Result};
use crate::features::{assemble_features, feature_dim, FeatureVector};
use crate::ingest::{
    filter_background, infer_direction, parse_capture, read_manifest, resolve_manifest_path, IngestConfig,
};
use crate::packet::PacketRecord;

/// A capture after parsing, background filtering and direction inference.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCapture {
    pub id: String,
    pub label: String,
    pub packets: Vec<PacketRecord>,
    pub parse_warnings: usize,
}

pub fn prepare_packets(id: &str, label: &str, packets: &[PacketRecord], ingest: &IngestConfig) -> Result<PreparedCapture> {
    let kept = filter_background(packets, ingest);
    let packets = if kept.is_empty() { kept } else { infer_direction(&kept, ingest)? };
    Ok(PreparedCapture {
        id: id.to_string(),
        label: label.to_string(),
        packets,
        parse_warnings: 0,
    })
}

pub fn prepare_capture(path: &Path, id: &str, label: &str, ingest: &IngestConfig) -> Result<PreparedCapture> {
    let capture = parse_capture(path)?;
    let mut prepared = prepare_packets(id, label, &capture.packets, ingest)?;
    prepared.parse_warnings = capture.warnings;
    Ok(prepared)
}

/// Parses every manifest entry in parallel. Failed entries are returned
/// alongside the successes instead of aborting the run.
pub fn load_manifest_captures(
    manifest: &Path,
    ingest: &IngestConfig,
) -> Result<(Vec<PreparedCapture>, Vec<(PathBuf, Error)>)> {
    let entries = read_manifest(manifest)?;
    let results: Vec<_> = entries
        .par_iter()
        .map(|entry| {
            let path = resolve_manifest_path(manifest, entry);
            prepare_capture(&path, &entry.capture_id(), &entry.label, ingest).map_err(|e| (path, e))
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(c) => ok.push(c),
            Err(f) => failed.push(f),
        }
    }
    Ok((ok, failed))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Extracted {
    pub rows: Vec<FeatureVector>,
    pub chunks_kept: usize,
    pub chunks_dropped: usize,
}

/// Chunks one prepared capture and computes a feature row per surviving chunk.
pub fn capture_features(capture: &PreparedCapture, config: &RunConfig) -> Result<Extracted> {
    let chunks = make_chunks(&capture.packets, config.window, config.overlap)?;
    let feature_config = config.feature_config();
    let mut out = Extracted::default();
    for mut chunk in chunks {
        if chunk.packets.len() < config.min_packets {
            out.chunks_dropped += 1;
            continue;
        }
        chunk.source_capture = capture.id.clone();
        chunk.label = Some(capture.label.clone());
        out.rows.push(assemble_features(&chunk, &feature_config)?);
        out.chunks_kept += 1;
    }
    Ok(out)
}

/// Rows of all captures, in capture order then chunk start order.
pub fn extract_prepared(captures: &[PreparedCapture], config: &RunConfig) -> Result<Extracted> {
    let parts = captures
        .par_iter()
        .map(|c| capture_features(c, config))
        .collect::<Result<Vec<_>>>()?;
    let mut all = Extracted::default();
    for part in parts {
        all.rows.extend(part.rows);
        all.chunks_kept += part.chunks_kept;
        all.chunks_dropped += part.chunks_dropped;
    }
    Ok(all)
}

/// Formats a real with 9 significant digits, `%g` style.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Provenance comment lines prepended to every CSV artifact.
pub fn header_lines(config: &RunConfig) -> String {
    format!("# {TOOL_NAME} {TOOL_VERSION}\n# config {}\n", config.to_json())
}

fn parse_header_config(comments: &[&str]) -> Result<Option<RunConfig>> {
    for line in comments {
        if let Some(json) = line.strip_prefix("# config ") {
            return serde_json::from_str(json)
                .map(Some)
                .map_err(|e| Error::format(format!("embedded config: {e}")));
        }
    }
    Ok(None)
}

/// Features CSV: provenance comment lines, then
/// `capture,chunk_start,label,f0..f{D-1}`.
pub fn write_features_csv<W: Write>(out: W, rows: &[FeatureVector], config: &RunConfig) -> Result<()> {
    let dim = feature_dim(config.n_bins);
    let mut out = out;
    out.write_all(header_lines(config).as_bytes())
        .map_err(|e| Error::io("<features>", e))?;
    let mut wtr = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::format(format!("writing features: {e}"));
    let mut header = vec!["capture".to_string(), "chunk_start".into(), "label".into()];
    header.extend((0..dim).map(|i| format!("f{i}")));
    wtr.write_record(&header).map_err(csv_err)?;
    for fv in rows {
        if fv.row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: fv.row.len(),
            });
        }
        let mut record = Vec::with_capacity(dim + 3);
        record.push(fv.capture.clone());
        record.push(format_sig9(fv.chunk_start));
        record.push(fv.label.clone());
        record.extend(fv.row.iter().map(|&v| format_sig9(v)));
        wtr.write_record(&record).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<features>", e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub rows: Vec<FeatureVector>,
    pub dim: usize,
    /// Configuration echoed by the extracting run, when present.
    pub config: Option<RunConfig>,
}

pub fn read_features_csv<R: Read>(mut input: R) -> Result<FeatureTable> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| Error::format(format!("features file: {e}")))?;
    let comments: Vec<&str> = text.lines().take_while(|l| l.starts_with('#')).collect();
    let config = parse_header_config(&comments)?;

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(format!("features header: {e}")))?
        .clone();
    let expect_fixed = ["capture", "chunk_start", "label"];
    for (i, want) in expect_fixed.iter().enumerate() {
        match headers.get(i) {
            Some(h) if h == *want => {}
            Some(h) => return Err(Error::format(format!("column {i} is {h:?}, expected {want:?}"))),
            None => return Err(Error::format(format!("missing column {want:?}"))),
        }
    }
    let dim = headers.len() - expect_fixed.len();
    for (i, h) in headers.iter().skip(expect_fixed.len()).enumerate() {
        if h != format!("f{i}") {
            return Err(Error::format(format!("column {} is {h:?}, expected \"f{i}\"", i + 3)));
        }
    }
    if let Some(cfg) = &config {
        if feature_dim(cfg.n_bins) != dim {
            return Err(Error::format(format!(
                "{dim} feature columns but the embedded config implies {}",
                feature_dim(cfg.n_bins)
            )));
        }
    }

    let mut rows = Vec::new();
    for (n, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::format(format!("features row {}: {e}", n + 1)))?;
        let num = |col: usize| -> Result<f64> {
            record[col].parse::<f64>().map_err(|_| {
                Error::format(format!("row {} column {:?}: not a number: {:?}", n + 1, &headers[col], &record[col]))
            })
        };
        let row = (3..record.len()).map(num).collect::<Result<Vec<f64>>>()?;
        rows.push(FeatureVector {
            capture: record[0].to_string(),
            chunk_start: num(1)?,
            label: record[2].to_string(),
            row,
        });
    }
    Ok(FeatureTable { rows, dim, config })
}

/// Provenance stored in a model's metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub tool: String,
    pub version: String,
    pub extraction: ExtractionSettings,
    pub run_config: RunConfig,
}

impl ModelProvenance {
    pub fn new(config: &RunConfig) -> Self {
        ModelProvenance {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            extraction: config.extraction(),
            run_config: config.clone(),
        }
    }

    pub fn attach(&self, model: &mut TrainedModel) {
        model.metadata = serde_json::to_value(self).expect("provenance serializes");
    }

    pub fn of(model: &TrainedModel) -> Option<ModelProvenance> {
        serde_json::from_value(model.metadata.clone()).ok()
    }
}

/// Refuses rows produced with different extraction settings than the model's.
pub fn check_compatible(model: &TrainedModel, extraction: &ExtractionSettings) -> Result<()> {
    if let Some(prov) = ModelProvenance::of(model) {
        let diff = prov.extraction.diff(extraction);
        if !diff.is_empty() {
            return Err(Error::config(format!(
                "extraction settings differ from the model's (model vs requested): {}",
                diff.join("; ")
            )));
        }
    }
    if feature_dim(extraction.n_bins) != model.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: model.feature_dim,
            found: feature_dim(extraction.n_bins),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub capture: String,
    pub chunk_start: f64,
    pub label: String,
    pub votes: Vec<f64>,
}

pub fn predict_rows(model: &TrainedModel, rows: &[FeatureVector]) -> Result<Vec<Prediction>> {
    rows.par_iter()
        .map(|fv| {
            Ok(Prediction {
                capture: fv.capture.clone(),
                chunk_start: fv.chunk_start,
                label: model.predict_row(&fv.row)?.to_string(),
                votes: model.vote_fractions(&fv.row)?,
            })
        })
        .collect()
}

/// `capture,chunk_start,predicted,vote_<label>...`; vote fractions use
/// shortest round-trip formatting.
pub fn write_predictions_csv<W: Write>(
    out: W,
    model: &TrainedModel,
    predictions: &[Prediction],
    config: &RunConfig,
) -> Result<()> {
    let mut out = out;
    out.write_all(header_lines(config).as_bytes())
        .map_err(|e| Error::io("<predictions>", e))?;
    let mut wtr = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::format(format!("writing predictions: {e}"));
    let mut header = vec!["capture".to_string(), "chunk_start".into(), "predicted".into()];
    header.extend(model.label_table.iter().map(|l| format!("vote_{l}")));
    wtr.write_record(&header).map_err(csv_err)?;
    for p in predictions {
        let mut record = vec![p.capture.clone(), format_sig9(p.chunk_start), p.label.clone()];
        record.extend(p.votes.iter().map(|v| v.to_string()));
        wtr.write_record(&record).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<predictions>", e))
}

/// Logs and drops captures that failed to load. Errors out only when nothing loaded.
pub fn require_some(captures: &[PreparedCapture], failures: &[(PathBuf, Error)]) -> Result<()> {
    for (path, err) in failures {
        match err {
            // these already name the file
            Error::Io { .. } | Error::Format(_) => warn!("skipping capture: {err}"),
            _ => warn!("skipping {}: {err}", path.display()),
        }
    }
    if captures.is_empty() {
        return Err(Error::EmptyInput("no capture in the manifest could be read"));
    }
    Ok(())
}
