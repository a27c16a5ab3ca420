//! Labeled synthetic captures with controllable flow, timing and size
//! profiles. Used as ground truth by the end-to-end tests.

use std::collections::HashSet;
use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, stage};
use crate::error::{Error, Result};
use crate::ingest::{nanos_to_secs, write_manifest, write_pcap, ManifestEntry, TimestampResolution};
use crate::packet::{Direction, PacketRecord, Proto};

/// Epoch of the first packet in every written synthetic capture.
pub const CAPTURE_EPOCH_SECS: u32 = 1_700_000_000;
pub const CLIENT_IP: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 2);

const BUILTIN: [(&str, &str); 3] = [
    ("bulk-download", include_str!("../fixtures/profiles/bulk-download.toml")),
    ("chatty-voip-like", include_str!("../fixtures/profiles/chatty-voip-like.toml")),
    ("bursty-web-like", include_str!("../fixtures/profiles/bursty-web-like.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConcurrencyMode {
    /// Exactly one flow.
    Single,
    /// Flows one after another with disjoint time spans.
    Sequential,
    /// Flows with overlapping time spans.
    Concurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    Tcp,
    Udp,
}

impl Transport {
    fn proto(self) -> Proto {
        match self {
            Transport::Tcp => Proto::Tcp,
            Transport::Udp => Proto::Udp,
        }
    }

    /// Smallest frame that fits Ethernet + IPv4 + the transport header.
    fn min_frame(self) -> u32 {
        match self {
            Transport::Tcp => 54,
            Transport::Udp => 42,
        }
    }

    fn server_port(self) -> u16 {
        match self {
            Transport::Tcp => 443,
            Transport::Udp => 3478,
        }
    }
}

/// Packet sizes in bytes, drawn from a normal distribution truncated to `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeDistribution {
    pub mean: f64,
    pub std: f64,
    pub min: u32,
    pub max: u32,
}

/// Inter-packet gaps in seconds, drawn from a normal distribution truncated at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapDistribution {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficProfile {
    pub label: String,
    pub mode: ConcurrencyMode,
    #[serde(default)]
    pub transport: Transport,
    pub flow_count: (u32, u32),
    pub packets_per_flow: (u32, u32),
    pub size: SizeDistribution,
    pub gap: GapDistribution,
    /// Capture length in seconds; later packets are cut.
    pub duration: f64,
    #[serde(default = "half")]
    pub outgoing_fraction: f64,
}

fn half() -> f64 {
    0.5
}

impl TrafficProfile {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let profile: TrafficProfile = toml::from_str(s).map_err(|e| Error::config(format!("profile: {e}")))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serializes")
    }

    /// One of the shipped fixture profiles by label.
    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, text)| Self::from_toml_str(text).expect("builtin profile is valid"))
    }

    pub fn builtins() -> Vec<Self> {
        BUILTIN.iter().map(|(n, _)| Self::builtin(n).unwrap()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(format!("profile {:?}: {msg}", self.label)));
        if self.label.trim().is_empty() {
            return bad("empty label".into());
        }
        for (name, (lo, hi)) in [("flow_count", self.flow_count), ("packets_per_flow", self.packets_per_flow)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} range [{lo}, {hi}] is empty or starts at 0"));
            }
        }
        let s = &self.size;
        if s.min > s.max {
            return bad(format!("size min {} exceeds max {}", s.min, s.max));
        }
        if s.min < self.transport.min_frame() {
            return bad(format!("size min {} is below the {}-byte header size", s.min, self.transport.min_frame()));
        }
        if !(s.mean >= s.min as f64 && s.mean <= s.max as f64) || !(s.std >= 0.0 && s.std.is_finite()) {
            return bad(format!("size mean {} must lie in [min, max] with finite std ≥ 0", s.mean));
        }
        let g = &self.gap;
        if !(g.mean >= 0.0 && g.mean.is_finite()) || !(g.std >= 0.0 && g.std.is_finite()) {
            return bad("gap mean and std must be finite and non-negative".into());
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if !(0.0..=1.0).contains(&self.outgoing_fraction) {
            return bad("outgoing_fraction must be in [0, 1]".into());
        }
        Ok(())
    }
}

/// Resamples until the draw lands in `[lo, hi]`; falls back to the clamped mean.
fn truncated_normal<R: Rng>(rng: &mut R, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    if std == 0.0 {
        return mean.clamp(lo, hi);
    }
    let normal = Normal::new(mean, std).expect("valid normal");
    for _ in 0..10_000 {
        let x = normal.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
    mean.clamp(lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCapture {
    pub label: String,
    /// Time-ordered, rebased to the first packet, directions filled in.
    pub packets: Vec<PacketRecord>,
    pub local: IpAddr,
}

impl SyntheticCapture {
    pub fn write_pcap(&self, path: &Path) -> Result<()> {
        write_pcap(path, &self.packets, CAPTURE_EPOCH_SECS, TimestampResolution::Micro)
    }
}

struct FlowPlan {
    times_us: Vec<u64>,
}

struct Generator<'a> {
    profile: &'a TrafficProfile,
    rng: ChaCha8Rng,
    duration_us: u64,
}

impl Generator<'_> {
    fn gap_us(&mut self) -> u64 {
        let g = truncated_normal(&mut self.rng, self.profile.gap.mean, self.profile.gap.std, 0.0, f64::INFINITY);
        (g * 1e6).round() as u64
    }

    /// Packet times of one flow starting at `start`, cut at the capture duration.
    fn flow_times(&mut self, start: u64) -> Vec<u64> {
        let (lo, hi) = self.profile.packets_per_flow;
        let n = self.rng.gen_range(lo..=hi);
        let mut times = Vec::with_capacity(n as usize);
        let mut t = start;
        for i in 0..n {
            if i > 0 {
                t += self.gap_us();
            }
            if t > self.duration_us {
                break;
            }
            times.push(t);
        }
        times
    }

    fn plan(&mut self) -> Vec<FlowPlan> {
        let (lo, hi) = self.profile.flow_count;
        let n_flows = match self.profile.mode {
            ConcurrencyMode::Single => 1,
            _ => self.rng.gen_range(lo..=hi),
        };
        let mut flows = vec![FlowPlan {
            times_us: self.flow_times(0),
        }];
        match self.profile.mode {
            ConcurrencyMode::Single => {}
            ConcurrencyMode::Sequential => {
                for _ in 1..n_flows {
                    let prev_end = *flows.last().unwrap().times_us.last().unwrap();
                    let start = prev_end + self.gap_us().max(1);
                    let times = self.flow_times(start);
                    if times.is_empty() {
                        break;
                    }
                    flows.push(FlowPlan { times_us: times });
                }
            }
            ConcurrencyMode::Concurrent => {
                let first_end = *flows[0].times_us.last().unwrap();
                for k in 1..n_flows {
                    // the second flow always starts inside the first one's span
                    let latest = if k == 1 { first_end } else { self.duration_us };
                    let start = self.rng.gen_range(0..=latest);
                    flows.push(FlowPlan {
                        times_us: self.flow_times(start),
                    });
                }
            }
        }
        flows
    }
}

/// Deterministic capture for `profile` under `seed`.
pub fn generate_capture(profile: &TrafficProfile, seed: u64) -> Result<SyntheticCapture> {
    profile.validate()?;
    let mut gen = Generator {
        profile,
        rng: ChaCha8Rng::seed_from_u64(seed),
        duration_us: (profile.duration * 1e6).round() as u64,
    };
    let plans = gen.plan();
    let rng = &mut gen.rng;
    let client = IpAddr::V4(CLIENT_IP);
    let proto = profile.transport.proto();
    let mut used_ports = HashSet::new();

    let mut packets: Vec<(u64, PacketRecord)> = Vec::new();
    for plan in &plans {
        let server = IpAddr::V4(Ipv4Addr::new(
            if rng.gen_bool(0.5) { 203 } else { 198 },
            if rng.gen_bool(0.5) { 0 } else { 51 },
            rng.gen_range(0..=255),
            rng.gen_range(1..=254),
        ));
        let client_port = loop {
            let p = rng.gen_range(49152..=65535u16);
            if used_ports.insert(p) {
                break p;
            }
        };
        let server_port = profile.transport.server_port();
        for &t in &plan.times_us {
            let size = truncated_normal(rng, profile.size.mean, profile.size.std, profile.size.min as f64, profile.size.max as f64)
                .round()
                .clamp(profile.size.min as f64, profile.size.max as f64) as u32;
            let outgoing = rng.gen_bool(profile.outgoing_fraction);
            let record = PacketRecord {
                timestamp: 0.0,
                length: size,
                src_ip: client,
                dst_ip: server,
                src_port: client_port,
                dst_port: server_port,
                proto,
                direction: Direction::Outgoing,
            };
            packets.push((t, if outgoing { record } else { record.reversed() }));
        }
    }
    packets.sort_by_key(|(t, _)| *t);
    let first = packets.first().map_or(0, |(t, _)| *t);
    let packets = packets
        .into_iter()
        .map(|(t, p)| PacketRecord {
            timestamp: nanos_to_secs((t - first) * 1000),
            ..p
        })
        .collect();
    Ok(SyntheticCapture {
        label: profile.label.clone(),
        packets,
        local: client,
    })
}

/// Writes `per_profile` captures of each profile into `dir` plus a
/// `manifest.csv` listing them. Returns the manifest entries.
pub fn generate_suite(dir: &Path, profiles: &[TrafficProfile], per_profile: usize, seed: u64) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut jobs = Vec::new();
    for (pi, profile) in profiles.iter().enumerate() {
        for i in 0..per_profile {
            let capture_seed = derive_seed(seed, stage::SYNTH ^ ((pi as u64) << 32 | i as u64));
            jobs.push((profile, format!("{}-{i:03}.pcap", profile.label), capture_seed));
        }
    }
    jobs.par_iter()
        .map(|(profile, name, s)| generate_capture(profile, *s)?.write_pcap(&dir.join(name)))
        .collect::<Result<Vec<()>>>()?;
    let entries: Vec<ManifestEntry> = jobs
        .iter()
        .map(|(profile, name, _)| ManifestEntry {
            path: name.into(),
            label: profile.label.clone(),
        })
        .collect();
    write_manifest(&dir.join("manifest.csv"), &entries)?;
    Ok(entries)
}
