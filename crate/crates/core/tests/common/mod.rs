//! Builders, random traces and independent reference implementations
//! shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::net::{IpAddr, Ipv4Addr};

use interflow::chunking::Flow;
use interflow::classifier::TrainedModel;
use interflow::{Direction, PacketRecord, Proto};
use rand::Rng;

pub const LOCAL: [u8; 4] = [10, 0, 0, 2];

/// Packet of conversation `conv` (one remote host per conversation).
pub fn pkt(t: f64, len: u32, conv: u8, outgoing: bool) -> PacketRecord {
    let p = PacketRecord {
        timestamp: t,
        length: len,
        src_ip: IpAddr::V4(Ipv4Addr::from(LOCAL)),
        dst_ip: IpAddr::V4(Ipv4Addr::new(93, 184, 0, conv)),
        src_port: 40000 + conv as u16,
        dst_port: 443,
        proto: Proto::Tcp,
        direction: Direction::Outgoing,
    };
    if outgoing {
        p
    } else {
        PacketRecord {
            direction: Direction::Incoming,
            ..p.reversed()
        }
    }
}

pub fn flow_of(packets: Vec<PacketRecord>) -> Flow {
    Flow {
        key: packets[0].flow_key(),
        packets,
    }
}

/// Timestamps either on a quarter-second lattice (to hit bin edges) or arbitrary.
pub fn random_time<R: Rng>(rng: &mut R, span: f64) -> f64 {
    if rng.gen_bool(0.5) {
        (rng.gen_range(0.0..span) * 4.0).floor() / 4.0
    } else {
        rng.gen_range(0.0..span)
    }
}

/// Up to 5 non-empty flows, at most 20 packets overall, sizes in 1..=1500.
pub fn random_micro_trace<R: Rng>(rng: &mut R) -> Vec<Flow> {
    let n_flows = rng.gen_range(1..=5usize);
    let budget = rng.gen_range(n_flows..=20usize);
    let mut per_flow = vec![1usize; n_flows];
    for _ in n_flows..budget {
        per_flow[rng.gen_range(0..n_flows)] += 1;
    }
    let offset = rng.gen_range(-5.0..5.0);
    per_flow
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let mut ts: Vec<f64> = (0..n).map(|_| offset + random_time(rng, 8.0)).collect();
            ts.sort_by(f64::total_cmp);
            let packets = ts
                .into_iter()
                .map(|t| pkt(t, rng.gen_range(1..=1500), k as u8, rng.gen_bool(0.5)))
                .collect();
            flow_of(packets)
        })
        .collect()
}

/// Time-sorted trace over a few conversations.
pub fn random_trace<R: Rng>(rng: &mut R, max_packets: usize, span: f64) -> Vec<PacketRecord> {
    let n = rng.gen_range(1..=max_packets);
    let convs = rng.gen_range(1..=6u8);
    let mut packets: Vec<PacketRecord> = (0..n)
        .map(|_| {
            pkt(
                random_time(rng, span),
                rng.gen_range(40..=1500),
                rng.gen_range(0..convs),
                rng.gen_bool(0.5),
            )
        })
        .collect();
    packets.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    packets
}

/// Literal triple loop over (flow, packet, bin). A packet that misses every
/// half-open bin can only sit at `t_max` and goes to the last bin.
pub fn oracle_raw_signal(flows: &[Flow], delta: f64) -> Vec<u128> {
    let all: Vec<f64> = flows.iter().flat_map(|f| f.packets.iter().map(|p| p.timestamp)).collect();
    let t_min = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let t_max = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = ((t_max - t_min) / delta).floor() as usize + 1;
    let mut bins = vec![0u128; n];
    for flow in flows {
        let mut a: u128 = 0;
        for p in &flow.packets {
            a += p.length as u128;
        }
        for p in &flow.packets {
            let mut placed = false;
            for (t, bin) in bins.iter_mut().enumerate() {
                let lo = t_min + delta * t as f64;
                let hi = t_min + delta * (t + 1) as f64;
                if lo <= p.timestamp && p.timestamp < hi {
                    *bin += a * p.length as u128;
                    placed = true;
                }
            }
            if !placed {
                assert_eq!(p.timestamp, t_max, "only the last packet may fall past the grid");
                bins[n - 1] += a * p.length as u128;
            }
        }
    }
    bins
}

/// Indices of the grid starts whose window holds `t`.
pub fn oracle_chunk_membership(first: f64, last: f64, window: f64, overlap: f64, t: f64) -> Vec<f64> {
    let stride = window - overlap;
    let mut out = Vec::new();
    let mut i = 0u64;
    loop {
        let start = first + i as f64 * stride;
        if start > last {
            break;
        }
        if start <= t && t < start + window {
            out.push(start);
        }
        i += 1;
    }
    out
}

/// Straightforward packet statistics in the field order of `PacketStats::to_array`.
pub fn oracle_packet_stats(xs: &[f64]) -> [f64; 18] {
    let mut out = [0.0; 18];
    let n = xs.len();
    if n == 0 {
        return out;
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let moment = |k: i32| xs.iter().map(|x| (x - mean).powi(k)).sum::<f64>() / nf;
    let m2 = moment(2);
    let (m3, m4) = (moment(3), moment(4));
    let mad = xs.iter().map(|x| (x - mean).abs()).sum::<f64>() / nf;
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out[0] = nf;
    out[1] = sorted[n - 1];
    out[2] = sorted[0];
    out[3] = mean;
    out[4] = m2;
    out[5] = m2.sqrt();
    out[6] = mad;
    if m2 > 0.0 {
        out[7] = m3 / m2.powf(1.5);
        out[8] = m4 / (m2 * m2) - 3.0;
    }
    for (i, p) in (1..=9).enumerate() {
        let rank = (n - 1) as f64 * (p as f64 * 10.0) / 100.0;
        let lo = rank.floor() as usize;
        let hi = rank.ceil() as usize;
        out[9 + i] = sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo]);
    }
    out
}

/// `[mean duration, mean size, flows, duration std, mean packets]`.
pub fn oracle_flow_stats(flows: &[Flow]) -> [f64; 5] {
    let n = flows.len() as f64;
    let durations: Vec<f64> = flows
        .iter()
        .map(|f| {
            let ts: Vec<f64> = f.packets.iter().map(|p| p.timestamp).collect();
            ts.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - ts.iter().cloned().fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mean_d = durations.iter().sum::<f64>() / n;
    let var_d = durations.iter().map(|d| (d - mean_d) * (d - mean_d)).sum::<f64>() / n;
    let bytes: f64 = flows.iter().flat_map(|f| &f.packets).map(|p| p.length as f64).sum();
    let packets: f64 = flows.iter().map(|f| f.packets.len() as f64).sum();
    [mean_d, bytes / n, n, var_d.sqrt(), packets / n]
}

/// `|a - b| <= tol * max(1, |a|, |b|)`
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}

/// Walks the serialized trees without touching the crate's prediction code.
pub fn oracle_forest_predict(model_json: &str, row: &[f64]) -> String {
    let doc: serde_json::Value = serde_json::from_str(model_json).unwrap();
    let labels: Vec<String> = doc["label_table"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let mut votes = vec![0u64; labels.len()];
    for tree in doc["trees"].as_array().unwrap() {
        let mut node = tree;
        while node["kind"] == "split" {
            let f = node["feature"].as_u64().unwrap() as usize;
            let thr = node["threshold"].as_f64().unwrap();
            node = if row[f] <= thr { &node["left"] } else { &node["right"] };
        }
        for (v, c) in votes.iter_mut().zip(node["counts"].as_array().unwrap()) {
            *v += c.as_u64().unwrap();
        }
    }
    let best = votes.iter().max().unwrap();
    labels[votes.iter().position(|v| v == best).unwrap()].clone()
}

/// Weighted child Gini impurity of splitting `labels` by `values <= thr`.
pub fn oracle_split_impurity(values: &[f64], labels: &[usize], n_labels: usize, thr: f64) -> Option<f64> {
    let mut left = vec![0f64; n_labels];
    let mut right = vec![0f64; n_labels];
    for (&v, &l) in values.iter().zip(labels) {
        if v <= thr {
            left[l] += 1.0;
        } else {
            right[l] += 1.0;
        }
    }
    let (nl, nr): (f64, f64) = (left.iter().sum(), right.iter().sum());
    if nl == 0.0 || nr == 0.0 {
        return None;
    }
    let gini = |c: &[f64], n: f64| 1.0 - c.iter().map(|x| (x / n) * (x / n)).sum::<f64>();
    let total = nl + nr;
    Some(nl / total * gini(&left, nl) + nr / total * gini(&right, nr))
}

/// Every prediction must come from the model's label table.
pub fn assert_model_labels(model: &TrainedModel, preds: &[String]) {
    for p in preds {
        assert!(model.label_table.contains(p), "{p} not in label table");
    }
}
