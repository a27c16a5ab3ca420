//! Fixed-duration, optionally overlapping time windows over a packet stream,
//! and per-window flow grouping.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::packet::{FlowKey, PacketRecord};

/// Packets falling in `[start, start + window)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub start: f64,
    pub window: f64,
    pub packets: Vec<PacketRecord>,
    pub source_capture: String,
    pub label: Option<String>,
}

impl Chunk {
    pub fn contains_time(&self, t: f64) -> bool {
        self.start <= t && t < self.start + self.window
    }
}

/// Both directions of one conversation, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub key: FlowKey,
    pub packets: Vec<PacketRecord>,
}

impl Flow {
    pub fn first_timestamp(&self) -> Option<f64> {
        self.packets.first().map(|p| p.timestamp)
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.packets.last().map(|p| p.timestamp)
    }

    /// Last minus first packet time; zero for a singleton flow.
    pub fn duration(&self) -> f64 {
        match (self.first_timestamp(), self.last_timestamp()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

pub fn validate_window(window: f64, overlap: f64) -> Result<()> {
    if !(window.is_finite() && window > 0.0) {
        return Err(Error::config(format!("window must be a positive number of seconds, got {window}")));
    }
    if !(overlap.is_finite() && overlap >= 0.0) {
        return Err(Error::config(format!("overlap must be non-negative, got {overlap}")));
    }
    if overlap >= window {
        return Err(Error::config(format!(
            "overlap ({overlap}s) must be smaller than the window ({window}s)"
        )));
    }
    Ok(())
}

/// Start times `t0 + i * (window - overlap)` up to the last packet time.
pub fn chunk_starts(first: f64, last: f64, window: f64, overlap: f64) -> Vec<f64> {
    let stride = window - overlap;
    let mut starts = Vec::new();
    let mut i: u64 = 0;
    loop {
        let start = first + i as f64 * stride;
        if start > last {
            break;
        }
        starts.push(start);
        i += 1;
    }
    starts
}

/// Splits time-ordered `packets` into windows anchored at the first packet.
/// Empty windows are dropped.
pub fn make_chunks(packets: &[PacketRecord], window: f64, overlap: f64) -> Result<Vec<Chunk>> {
    validate_window(window, overlap)?;
    let (Some(first), Some(last)) = (packets.first(), packets.last()) else {
        return Ok(Vec::new());
    };
    debug_assert!(packets.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));

    let mut chunks = Vec::new();
    for start in chunk_starts(first.timestamp, last.timestamp, window, overlap) {
        let end = start + window;
        let lo = packets.partition_point(|p| p.timestamp < start);
        let hi = packets.partition_point(|p| p.timestamp < end);
        if lo < hi {
            chunks.push(Chunk {
                start,
                window,
                packets: packets[lo..hi].to_vec(),
                source_capture: String::new(),
                label: None,
            });
        }
    }
    Ok(chunks)
}

/// Partitions a chunk's packets by canonical flow key. Flows appear in
/// order of their first packet.
pub fn group_flows(chunk: &Chunk) -> Vec<Flow> {
    group_packets(&chunk.packets)
}

pub fn group_packets(packets: &[PacketRecord]) -> Vec<Flow> {
    let mut index: HashMap<FlowKey, usize> = HashMap::new();
    let mut flows: Vec<Flow> = Vec::new();
    for p in packets {
        let key = p.flow_key();
        let slot = *index.entry(key).or_insert_with(|| {
            flows.push(Flow {
                key,
                packets: Vec::new(),
            });
            flows.len() - 1
        });
        flows[slot].packets.push(*p);
    }
    flows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::{Direction, Proto};
    use std::net::{IpAddr, Ipv4Addr};

    fn at(t: f64) -> PacketRecord {
        PacketRecord {
            timestamp: t,
            length: 60,
            src_ip: IpAddr::V4(Ipv4Addr::new(10, 0, 0, 2)),
            dst_ip: IpAddr::V4(Ipv4Addr::new(1, 1, 1, 1)),
            src_port: 40000,
            dst_port: 443,
            proto: Proto::Tcp,
            direction: Direction::Outgoing,
        }
    }

    fn times(c: &Chunk) -> Vec<f64> {
        c.packets.iter().map(|p| p.timestamp).collect()
    }

    #[test]
    fn overlapping_grid() {
        let packets: Vec<_> = (0..=10).map(|t| at(t as f64)).collect();
        let chunks = make_chunks(&packets, 5.0, 2.0).unwrap();
        let starts: Vec<f64> = chunks.iter().map(|c| c.start).collect();
        assert_eq!(starts, vec![0.0, 3.0, 6.0, 9.0]);
        assert_eq!(times(&chunks[1]), vec![3.0, 4.0, 5.0, 6.0, 7.0]);
        assert_eq!(times(&chunks[3]), vec![9.0, 10.0]);
    }

    #[test]
    fn disjoint_grid_counts_boundary_once() {
        let packets: Vec<_> = (0..=10).map(|t| at(t as f64)).collect();
        let chunks = make_chunks(&packets, 5.0, 0.0).unwrap();
        let starts: Vec<f64> = chunks.iter().map(|c| c.start).collect();
        assert_eq!(starts, vec![0.0, 5.0, 10.0]);
        let holding_five = chunks.iter().filter(|c| times(c).contains(&5.0)).count();
        assert_eq!(holding_five, 1);
    }

    #[test]
    fn single_packet_single_chunk() {
        let chunks = make_chunks(&[at(0.0)], 30.0, 10.0).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].packets.len(), 1);
    }

    #[test]
    fn empty_input_and_bad_overlap() {
        assert!(make_chunks(&[], 5.0, 1.0).unwrap().is_empty());
        assert!(make_chunks(&[at(0.0)], 5.0, 5.0).unwrap_err().is_config());
        assert!(make_chunks(&[at(0.0)], 0.0, 0.0).unwrap_err().is_config());
    }

    #[test]
    fn gaps_produce_no_empty_chunks() {
        let chunks = make_chunks(&[at(0.0), at(100.0)], 10.0, 0.0).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[1].start, 100.0);
    }

    #[test]
    fn bidirectional_packets_share_a_flow() {
        let p = at(0.0);
        let chunk = Chunk {
            start: 0.0,
            window: 10.0,
            packets: vec![p, PacketRecord { timestamp: 1.0, ..p.reversed() }, PacketRecord { timestamp: 2.0, ..p }],
            source_capture: "c".into(),
            label: None,
        };
        let flows = group_flows(&chunk);
        assert_eq!(flows.len(), 1);
        assert_eq!(flows[0].packets.len(), 3);
        assert_eq!(flows[0].duration(), 2.0);
    }

    #[test]
    fn three_conversations_conserve_packets() {
        let packets: Vec<_> = (0..9)
            .map(|i| PacketRecord {
                timestamp: i as f64,
                dst_port: 443 + (i % 3) as u16,
                ..at(0.0)
            })
            .collect();
        let flows = group_packets(&packets);
        assert_eq!(flows.len(), 3);
        assert_eq!(flows.iter().map(|f| f.packets.len()).sum::<usize>(), 9);
    }
}
