//! Capture ingestion: PCAP/PCAPNG decoding, background-port filtering,
//! direction inference and canonical flow keys.

mod pcap;
mod writer;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use ipnet::IpNet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::packet::{Direction, FlowKey, PacketRecord};

pub(crate) use self::pcap::nanos_to_secs;
pub use self::pcap::{parse_capture, parse_capture_from, Capture};
pub use self::writer::{encode_frame, write_pcap, PcapWriter, TimestampResolution};

/// DNS, DHCP, NTP, NetBIOS and mDNS.
pub const DEFAULT_FILTERED_PORTS: [u16; 8] = [53, 67, 68, 123, 137, 138, 139, 5353];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub filtered_ports: BTreeSet<u16>,
    /// Address or prefix identifying the local host. When unset the
    /// dominant endpoint heuristic picks one per capture.
    pub local_endpoint: Option<IpNet>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            filtered_ports: DEFAULT_FILTERED_PORTS.into_iter().collect(),
            local_endpoint: None,
        }
    }
}

/// Parses `10.0.0.2` or `192.168.1.0/24` style local endpoint specs.
pub fn parse_local_endpoint(s: &str) -> Result<IpNet> {
    let s = s.trim();
    if let Ok(net) = s.parse::<IpNet>() {
        return Ok(net);
    }
    s.parse::<IpAddr>()
        .map(IpNet::from)
        .map_err(|_| Error::config(format!("invalid local endpoint {s:?}")))
}

pub fn canonical_flow_key(p: &PacketRecord) -> FlowKey {
    p.flow_key()
}

/// Drops every packet with either port in `config.filtered_ports`.
pub fn filter_background(packets: &[PacketRecord], config: &IngestConfig) -> Vec<PacketRecord> {
    let ports = &config.filtered_ports;
    packets
        .iter()
        .filter(|p| !ports.contains(&p.src_port) && !ports.contains(&p.dst_port))
        .copied()
        .collect()
}

/// The IP taking part in the most distinct flows. Ties go to the smallest address.
pub fn dominant_endpoint(packets: &[PacketRecord]) -> Option<IpAddr> {
    let keys: HashSet<FlowKey> = packets.iter().map(PacketRecord::flow_key).collect();
    let mut counts: BTreeMap<IpAddr, usize> = BTreeMap::new();
    for key in &keys {
        let (a, b) = (key.endpoint_a().ip, key.endpoint_b().ip);
        *counts.entry(a).or_default() += 1;
        if b != a {
            *counts.entry(b).or_default() += 1;
        }
    }
    let mut best: Option<(IpAddr, usize)> = None;
    for (ip, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((ip, n));
        }
    }
    best.map(|(ip, _)| ip)
}

/// Labels each packet OUTGOING or INCOMING relative to the local endpoint.
///
/// Packets touching neither side stay UNKNOWN.
pub fn infer_direction(packets: &[PacketRecord], config: &IngestConfig) -> Result<Vec<PacketRecord>> {
    if packets.is_empty() {
        return Err(Error::NoPackets);
    }
    let local = match config.local_endpoint {
        Some(net) => net,
        None => IpNet::from(dominant_endpoint(packets).ok_or(Error::NoPackets)?),
    };
    Ok(packets
        .iter()
        .map(|p| {
            let direction = if local.contains(&p.src_ip) {
                Direction::Outgoing
            } else if local.contains(&p.dst_ip) {
                Direction::Incoming
            } else {
                Direction::Unknown
            };
            PacketRecord { direction, ..*p }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
}

impl ManifestEntry {
    /// Identifier used for provenance columns: the path as written in the manifest.
    pub fn capture_id(&self) -> String {
        self.path.to_string_lossy().into_owned()
    }
}

/// Reads a `path,label` manifest. Relative capture paths stay relative;
/// use [`resolve_manifest_path`] to locate them.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest_from(file)
}

pub fn read_manifest_from<R: std::io::Read>(reader: R) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(format!("manifest header: {e}")))?
        .clone();
    if headers.len() != 2 || &headers[0] != "path" || &headers[1] != "label" {
        return Err(Error::format(format!(
            "manifest header must be `path,label`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut entries = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::format(format!("manifest row {}: {e}", i + 1)))?;
        let (path, label) = (&record[0], &record[1]);
        if path.is_empty() || label.is_empty() {
            return Err(Error::format(format!("manifest row {}: empty field", i + 1)));
        }
        entries.push(ManifestEntry {
            path: PathBuf::from(path),
            label: label.to_string(),
        });
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::format(e.to_string()))?;
    let io_err = |e: csv::Error| Error::format(format!("{}: {e}", path.display()));
    wtr.write_record(["path", "label"]).map_err(io_err)?;
    for entry in entries {
        wtr.write_record([entry.capture_id().as_str(), entry.label.as_str()])
            .map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// Capture paths in a manifest are relative to the manifest's directory.
pub fn resolve_manifest_path(manifest: &Path, entry: &ManifestEntry) -> PathBuf {
    if entry.path.is_absolute() {
        return entry.path.clone();
    }
    match manifest.parent() {
        Some(dir) => dir.join(&entry.path),
        None => entry.path.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::Proto;
    use std::net::Ipv4Addr;

    fn pkt(src: [u8; 4], sport: u16, dst: [u8; 4], dport: u16) -> PacketRecord {
        PacketRecord {
            timestamp: 0.0,
            length: 100,
            src_ip: IpAddr::V4(Ipv4Addr::from(src)),
            dst_ip: IpAddr::V4(Ipv4Addr::from(dst)),
            src_port: sport,
            dst_port: dport,
            proto: Proto::Tcp,
            direction: Direction::Unknown,
        }
    }

    #[test]
    fn default_filter_keeps_only_https() {
        let packets = vec![
            pkt([1, 2, 3, 4], 443, [10, 0, 0, 2], 50000),
            pkt([8, 8, 8, 8], 53, [10, 0, 0, 2], 50001),
        ];
        let out = filter_background(&packets, &IngestConfig::default());
        assert_eq!(out, vec![packets[0]]);
    }

    #[test]
    fn empty_filter_is_identity() {
        let packets = vec![
            pkt([1, 2, 3, 4], 53, [10, 0, 0, 2], 67),
            pkt([1, 2, 3, 4], 443, [10, 0, 0, 2], 5353),
        ];
        let config = IngestConfig {
            filtered_ports: BTreeSet::new(),
            ..Default::default()
        };
        assert_eq!(filter_background(&packets, &config), packets);
    }

    #[test]
    fn flow_key_is_direction_free() {
        let p = pkt([10, 0, 0, 2], 50000, [1, 2, 3, 4], 443);
        assert_eq!(canonical_flow_key(&p), canonical_flow_key(&p.reversed()));
    }

    #[test]
    fn same_ip_orders_by_port() {
        let p = pkt([10, 0, 0, 2], 50000, [10, 0, 0, 2], 443);
        let key = canonical_flow_key(&p);
        assert_eq!(key.endpoint_a().port, 443);
        assert_eq!(key.endpoint_b().port, 50000);
    }

    #[test]
    fn dominant_endpoint_wins_without_config() {
        let local = [10, 0, 0, 2];
        let packets: Vec<_> = (0..5u8)
            .flat_map(|i| {
                let p = pkt(local, 50000 + i as u16, [93, 184, 0, i], 443);
                [p, p.reversed()]
            })
            .collect();
        let out = infer_direction(&packets, &IngestConfig::default()).unwrap();
        for (before, after) in packets.iter().zip(&out) {
            let expected = if before.src_ip == IpAddr::from(local) {
                Direction::Outgoing
            } else {
                Direction::Incoming
            };
            assert_eq!(after.direction, expected);
        }
    }

    #[test]
    fn explicit_prefix_marks_outgoing() {
        let config = IngestConfig {
            local_endpoint: Some(parse_local_endpoint("192.168.1.0/24").unwrap()),
            ..Default::default()
        };
        let out = infer_direction(&[pkt([192, 168, 1, 5], 40000, [8, 8, 4, 4], 443)], &config).unwrap();
        assert_eq!(out[0].direction, Direction::Outgoing);
    }

    #[test]
    fn unrelated_packets_stay_unknown() {
        let config = IngestConfig {
            local_endpoint: Some(parse_local_endpoint("10.0.0.2").unwrap()),
            ..Default::default()
        };
        let out = infer_direction(&[pkt([1, 1, 1, 1], 1, [2, 2, 2, 2], 2)], &config).unwrap();
        assert_eq!(out[0].direction, Direction::Unknown);
    }

    #[test]
    fn direction_inference_rejects_empty_input() {
        let err = infer_direction(&[], &IngestConfig::default()).unwrap_err();
        assert_eq!(err.to_string(), "no packets for direction inference");
    }

    #[test]
    fn invalid_local_endpoint_is_config_error() {
        assert!(parse_local_endpoint("not-an-ip").unwrap_err().is_config());
    }

    #[test]
    fn manifest_requires_header() {
        let err = read_manifest_from("file,class\na.pcap,x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        let ok = read_manifest_from("path,label\na.pcap,web\nb.pcap,voip\n".as_bytes()).unwrap();
        assert_eq!(ok.len(), 2);
        assert_eq!(ok[1].label, "voip");
    }
}
