//! Unified amplitude-weighted inter-flow signal of a chunk.
//!
//! Every flow `k` contributes its amplitude `A_k` (total bytes) times the
//! bytes it placed in each time bin, so the signal at bin `t` is
//!
//! ```text
//! S(t) = sum_k A_k * sum_j l_jk * [t_min + delta*t <= t_jk < t_min + delta*(t+1)]
//! ```
//!
//! Bin values are kept as exact integers; a flow contributes `A_k^2` in total.

use serde::{Deserialize, Serialize};

use crate::chunking::{Chunk, Flow};
use crate::error::{Error, Result};
use crate::features::percentile_sorted;

pub const INTERARRIVAL_STATS: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalConfig {
    /// Bin width in seconds.
    pub delta: f64,
    /// Length of the fixed-size signal handed to the classifier.
    pub n_bins: usize,
}

impl Default for SignalConfig {
    fn default() -> Self {
        SignalConfig {
            delta: 1.0,
            n_bins: 60,
        }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::config(format!("delta must be positive, got {}", self.delta)));
        }
        if self.n_bins == 0 {
            return Err(Error::config("signal bins must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSignal {
    pub t_min: f64,
    pub t_max: f64,
    pub delta: f64,
    pub bins: Vec<u128>,
}

impl RawSignal {
    pub fn mass(&self) -> u128 {
        self.bins.iter().sum()
    }
}

/// Normalized fixed-length signal plus the inter-arrival summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalVector {
    pub bins: Vec<f64>,
    pub interarrival_stats: [f64; INTERARRIVAL_STATS],
}

/// Total bytes of a flow.
pub fn flow_amplitude(flow: &Flow) -> u64 {
    flow.packets.iter().map(|p| p.length as u64).sum()
}

/// Number of bins covering `[t_min, t_max]` with step `delta`.
pub fn bin_count(t_min: f64, t_max: f64, delta: f64) -> usize {
    ((t_max - t_min) / delta).floor() as usize + 1
}

fn bin_lower(t_min: f64, delta: f64, i: usize) -> f64 {
    t_min + delta * i as f64
}

/// Index of the half-open bin holding `t`. Times past the last bin's upper
/// edge (a packet exactly at `t_max`) land in the final bin.
fn bin_index(t: f64, t_min: f64, delta: f64, n: usize) -> usize {
    let guess = ((t - t_min) / delta).floor();
    let mut i = if guess <= 0.0 { 0 } else { (guess as usize).min(n - 1) };
    // floor() of the quotient can be off by one against the bin edges
    while i > 0 && t < bin_lower(t_min, delta, i) {
        i -= 1;
    }
    while i + 1 < n && t >= bin_lower(t_min, delta, i + 1) {
        i += 1;
    }
    i
}

pub fn build_raw_signal(flows: &[Flow], delta: f64) -> Result<RawSignal> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::config(format!("delta must be positive, got {delta}")));
    }
    let mut times = flows.iter().flat_map(|f| f.packets.iter().map(|p| p.timestamp));
    let Some(t0) = times.next() else {
        return Err(Error::NoFlows);
    };
    let (t_min, t_max) = times.fold((t0, t0), |(lo, hi), t| (lo.min(t), hi.max(t)));

    let n = bin_count(t_min, t_max, delta);
    let mut bins = vec![0u128; n];
    for flow in flows {
        let amplitude = flow_amplitude(flow) as u128;
        for p in &flow.packets {
            bins[bin_index(p.timestamp, t_min, delta, n)] += amplitude * p.length as u128;
        }
    }
    Ok(RawSignal {
        t_min,
        t_max,
        delta,
        bins,
    })
}

/// `(v - min) / (max - min)`; a constant input maps to all zeros.
pub fn normalize_minmax(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("min-max normalization"));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi == lo {
        return Ok(vec![0.0; values.len()]);
    }
    let span = hi - lo;
    Ok(values.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect())
}

/// Fits integer bins to `n_bins`: zero-pads shorter inputs and sums
/// contiguous groups of longer ones (the first `len % n_bins` groups get one
/// extra element).
pub fn resample_bins(bins: &[u128], n_bins: usize) -> Vec<u128> {
    assert!(n_bins >= 1, "n_bins must be positive");
    let len = bins.len();
    if len <= n_bins {
        let mut out = bins.to_vec();
        out.resize(n_bins, 0);
        return out;
    }
    let base = len / n_bins;
    let extra = len % n_bins;
    let mut out = Vec::with_capacity(n_bins);
    let mut pos = 0;
    for g in 0..n_bins {
        let size = base + usize::from(g < extra);
        out.push(bins[pos..pos + size].iter().sum());
        pos += size;
    }
    out
}

pub fn resample_to_fixed(raw: &RawSignal, n_bins: usize) -> Vec<f64> {
    resample_bins(&raw.bins, n_bins)
        .into_iter()
        .map(|v| v as f64)
        .collect()
}

/// Mean, std, min, max and the 10th..90th percentiles of the min-max
/// normalized gaps between consecutive packets of the whole chunk.
pub fn interarrival_summary(chunk: &Chunk) -> [f64; INTERARRIVAL_STATS] {
    let mut times: Vec<f64> = chunk.packets.iter().map(|p| p.timestamp).collect();
    interarrival_summary_of(&mut times)
}

pub(crate) fn interarrival_summary_of(times: &mut [f64]) -> [f64; INTERARRIVAL_STATS] {
    let mut out = [0.0; INTERARRIVAL_STATS];
    if times.len() < 2 {
        return out;
    }
    times.sort_by(f64::total_cmp);
    let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut norm = normalize_minmax(&gaps).expect("at least one gap");
    norm.sort_by(f64::total_cmp);

    let n = norm.len() as f64;
    let mean = norm.iter().sum::<f64>() / n;
    let var = norm.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n;
    out[0] = mean;
    out[1] = var.sqrt();
    out[2] = norm[0];
    out[3] = norm[norm.len() - 1];
    for (slot, p) in out[4..].iter_mut().zip((10..=90).step_by(10)) {
        *slot = percentile_sorted(&norm, p as f64);
    }
    out
}

/// Builds the classifier-facing signal for a chunk whose flows are already grouped.
pub fn signal_vector(chunk: &Chunk, flows: &[Flow], config: &SignalConfig) -> Result<SignalVector> {
    let raw = build_raw_signal(flows, config.delta)?;
    let fixed = resample_to_fixed(&raw, config.n_bins);
    Ok(SignalVector {
        bins: normalize_minmax(&fixed)?,
        interarrival_stats: interarrival_summary(chunk),
    })
}
