//! Packet-level and intra-flow statistics, and assembly of the per-chunk
//! feature row.
//!
//! Row layout: packet stats for incoming, outgoing and all packets (18 each),
//! five flow stats, the normalized signal bins, then 13 inter-arrival stats.
//! Moments use the population (n) denominator and kurtosis is excess
//! kurtosis. Percentiles interpolate linearly at rank `(n - 1) * p / 100`.

use serde::{Deserialize, Serialize};

use crate::chunking::{group_flows, Chunk, Flow};
use crate::error::{Error, Result};
use crate::packet::Direction;
use crate::signal::{flow_amplitude, signal_vector, SignalConfig, INTERARRIVAL_STATS};

pub const PACKET_STATS: usize = 18;
pub const FLOW_STATS: usize = 5;

/// Number of columns in a feature row for a given signal length.
pub fn feature_dim(n_bins: usize) -> usize {
    3 * PACKET_STATS + FLOW_STATS + n_bins + INTERARRIVAL_STATS
}

/// Linear interpolation between closest ranks. `sorted` must be ascending and non-empty.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let rank = (n - 1) as f64 * p / 100.0;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let (a, b) = (sorted[lo], sorted[hi.min(n - 1)]);
    if lo == hi || a == b {
        return a;
    }
    (a + (b - a) * (rank - lo as f64)).clamp(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PacketStats {
    pub count: f64,
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub variance: f64,
    pub std: f64,
    pub mean_abs_dev: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    /// 10th, 20th, ..., 90th.
    pub percentiles: [f64; 9],
}

impl PacketStats {
    pub fn to_array(&self) -> [f64; PACKET_STATS] {
        let mut out = [0.0; PACKET_STATS];
        out[..9].copy_from_slice(&[
            self.count,
            self.max,
            self.min,
            self.mean,
            self.variance,
            self.std,
            self.mean_abs_dev,
            self.skewness,
            self.kurtosis,
        ]);
        out[9..].copy_from_slice(&self.percentiles);
        out
    }
}

pub fn packet_stats(sizes: &[f64]) -> PacketStats {
    if sizes.is_empty() {
        return PacketStats::default();
    }
    // sorted accumulation makes the result independent of input order
    let mut xs = sizes.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let (min, max) = (xs[0], xs[xs.len() - 1]);
    let mean = xs.iter().sum::<f64>() / n;

    let mut percentiles = [0.0; 9];
    for (slot, p) in percentiles.iter_mut().zip((10..=90).step_by(10)) {
        *slot = percentile_sorted(&xs, p as f64);
    }

    let mut stats = PacketStats {
        count: n,
        max,
        min,
        mean: mean.clamp(min, max),
        percentiles,
        ..Default::default()
    };
    if min == max {
        return stats;
    }
    let (mut m2, mut m3, mut m4, mut mad) = (0.0, 0.0, 0.0, 0.0);
    for &x in &xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        mad += d.abs();
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    stats.variance = m2;
    stats.std = m2.sqrt();
    stats.mean_abs_dev = mad / n;
    if m2 > 0.0 {
        stats.skewness = m3 / m2.powf(1.5);
        stats.kurtosis = m4 / (m2 * m2) - 3.0;
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowStats {
    pub mean_duration: f64,
    pub mean_size: f64,
    pub flow_count: f64,
    pub duration_std: f64,
    pub mean_packets: f64,
}

impl FlowStats {
    pub fn to_array(&self) -> [f64; FLOW_STATS] {
        [
            self.mean_duration,
            self.mean_size,
            self.flow_count,
            self.duration_std,
            self.mean_packets,
        ]
    }
}

pub fn flow_stats(flows: &[Flow]) -> Result<FlowStats> {
    if flows.is_empty() {
        return Err(Error::NoFlows);
    }
    let n = flows.len() as f64;
    let mut durations: Vec<f64> = flows.iter().map(Flow::duration).collect();
    durations.sort_by(f64::total_cmp);
    let mean_duration = durations.iter().sum::<f64>() / n;
    let duration_var = durations.iter().map(|d| (d - mean_duration).powi(2)).sum::<f64>() / n;
    let total_bytes: u64 = flows.iter().map(flow_amplitude).sum();
    let total_packets: usize = flows.iter().map(|f| f.packets.len()).sum();
    Ok(FlowStats {
        mean_duration,
        mean_size: total_bytes as f64 / n,
        flow_count: n,
        duration_std: duration_var.sqrt(),
        mean_packets: total_packets as f64 / n,
    })
}

/// One classifier row with its label and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub row: Vec<f64>,
    pub label: String,
    pub capture: String,
    pub chunk_start: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub signal: SignalConfig,
}

pub fn assemble_features(chunk: &Chunk, config: &FeatureConfig) -> Result<FeatureVector> {
    let sizes_where = |keep: &dyn Fn(Direction) -> bool| -> Vec<f64> {
        chunk
            .packets
            .iter()
            .filter(|p| keep(p.direction))
            .map(|p| p.length as f64)
            .collect()
    };
    let incoming = packet_stats(&sizes_where(&|d| d == Direction::Incoming));
    let outgoing = packet_stats(&sizes_where(&|d| d == Direction::Outgoing));
    let combined = packet_stats(&sizes_where(&|_| true));

    let flows = group_flows(chunk);
    let flow = flow_stats(&flows)?;
    let signal = signal_vector(chunk, &flows, &config.signal)?;

    let mut row = Vec::with_capacity(feature_dim(config.signal.n_bins));
    row.extend_from_slice(&incoming.to_array());
    row.extend_from_slice(&outgoing.to_array());
    row.extend_from_slice(&combined.to_array());
    row.extend_from_slice(&flow.to_array());
    row.extend_from_slice(&signal.bins);
    row.extend_from_slice(&signal.interarrival_stats);
    debug_assert_eq!(row.len(), feature_dim(config.signal.n_bins));

    Ok(FeatureVector {
        row,
        label: chunk.label.clone().unwrap_or_default(),
        capture: chunk.source_capture.clone(),
        chunk_start: chunk.start,
    })
}
