use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::IpAddr;
use std::path::Path;

use crate::error::{Error, Result};
use crate::packet::{PacketRecord, Proto};

const LINKTYPE_ETHERNET: u32 = 1;
const SNAPLEN: u32 = 65535;
const ETH_HEADER: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestampResolution {
    Micro,
    Nano,
}

/// Classic libpcap writer, little-endian, Ethernet link type.
pub struct PcapWriter<W: Write> {
    inner: W,
    resolution: TimestampResolution,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut inner: W, resolution: TimestampResolution) -> std::io::Result<Self> {
        let magic: u32 = match resolution {
            TimestampResolution::Micro => 0xa1b2_c3d4,
            TimestampResolution::Nano => 0xa1b2_3c4d,
        };
        inner.write_all(&magic.to_le_bytes())?;
        inner.write_all(&2u16.to_le_bytes())?;
        inner.write_all(&4u16.to_le_bytes())?;
        inner.write_all(&0i32.to_le_bytes())?;
        inner.write_all(&0u32.to_le_bytes())?;
        inner.write_all(&SNAPLEN.to_le_bytes())?;
        inner.write_all(&LINKTYPE_ETHERNET.to_le_bytes())?;
        Ok(PcapWriter { inner, resolution })
    }

    /// Writes one record. `frame` may be shorter than `orig_len` (snapped capture).
    pub fn write_frame(&mut self, epoch_nanos: u64, frame: &[u8], orig_len: u32) -> std::io::Result<()> {
        let secs = (epoch_nanos / 1_000_000_000) as u32;
        let sub = epoch_nanos % 1_000_000_000;
        let frac = match self.resolution {
            TimestampResolution::Micro => (sub / 1000) as u32,
            TimestampResolution::Nano => sub as u32,
        };
        self.inner.write_all(&secs.to_le_bytes())?;
        self.inner.write_all(&frac.to_le_bytes())?;
        self.inner.write_all(&(frame.len() as u32).to_le_bytes())?;
        self.inner.write_all(&orig_len.to_le_bytes())?;
        self.inner.write_all(frame)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Writes `packets` as a classic pcap file whose first packet sits at
/// `epoch_secs`. Frames carry headers only; the record's original length
/// field holds the packet length.
pub fn write_pcap(
    path: &Path,
    packets: &[PacketRecord],
    epoch_secs: u32,
    resolution: TimestampResolution,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = PcapWriter::new(BufWriter::new(file), resolution).map_err(|e| Error::io(path, e))?;
    let base = epoch_secs as u64 * 1_000_000_000;
    for p in packets {
        if !(p.timestamp >= 0.0 && p.timestamp.is_finite()) {
            return Err(Error::config(format!("cannot encode timestamp {}", p.timestamp)));
        }
        let frame = encode_frame(p)?;
        let nanos = base + (p.timestamp * 1e9).round() as u64;
        writer
            .write_frame(nanos, &frame, p.length)
            .map_err(|e| Error::io(path, e))?;
    }
    writer
        .into_inner()
        .flush()
        .map_err(|e| Error::io(path, e))
}

/// Ethernet + IP + TCP/UDP headers for `p`, with IP and UDP length fields
/// describing the full `p.length`-byte frame.
pub fn encode_frame(p: &PacketRecord) -> Result<Vec<u8>> {
    let l4_len = match p.proto {
        Proto::Tcp => 20,
        Proto::Udp => 8,
        Proto::Other => return Err(Error::config("only TCP and UDP packets can be encoded")),
    };
    let l3_len = match (p.src_ip, p.dst_ip) {
        (IpAddr::V4(_), IpAddr::V4(_)) => 20,
        (IpAddr::V6(_), IpAddr::V6(_)) => 40,
        _ => return Err(Error::config("mixed IPv4/IPv6 endpoints")),
    };
    let header_len = ETH_HEADER + l3_len + l4_len;
    if (p.length as usize) < header_len {
        return Err(Error::config(format!(
            "packet length {} below header size {header_len}",
            p.length
        )));
    }
    let ip_total = p.length as usize - ETH_HEADER;
    let mut frame = Vec::with_capacity(header_len);
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]);
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
    let proto_num = if p.proto == Proto::Tcp { 6u8 } else { 17u8 };

    match (p.src_ip, p.dst_ip) {
        (IpAddr::V4(src), IpAddr::V4(dst)) => {
            frame.extend_from_slice(&0x0800u16.to_be_bytes());
            let mut ip = [0u8; 20];
            ip[0] = 0x45;
            ip[2..4].copy_from_slice(&(ip_total.min(u16::MAX as usize) as u16).to_be_bytes());
            ip[6] = 0x40; // don't fragment
            ip[8] = 64;
            ip[9] = proto_num;
            ip[12..16].copy_from_slice(&src.octets());
            ip[16..20].copy_from_slice(&dst.octets());
            let sum = ipv4_checksum(&ip);
            ip[10..12].copy_from_slice(&sum.to_be_bytes());
            frame.extend_from_slice(&ip);
        }
        (IpAddr::V6(src), IpAddr::V6(dst)) => {
            frame.extend_from_slice(&0x86DDu16.to_be_bytes());
            let mut ip = [0u8; 40];
            ip[0] = 0x60;
            let payload = (ip_total - 40).min(u16::MAX as usize) as u16;
            ip[4..6].copy_from_slice(&payload.to_be_bytes());
            ip[6] = proto_num;
            ip[7] = 64;
            ip[8..24].copy_from_slice(&src.octets());
            ip[24..40].copy_from_slice(&dst.octets());
            frame.extend_from_slice(&ip);
        }
        _ => unreachable!(),
    }

    frame.extend_from_slice(&p.src_port.to_be_bytes());
    frame.extend_from_slice(&p.dst_port.to_be_bytes());
    if p.proto == Proto::Tcp {
        let mut tcp = [0u8; 16];
        tcp[8] = 0x50; // data offset 5 words
        tcp[9] = 0x18; // PSH|ACK
        tcp[10..12].copy_from_slice(&0xffffu16.to_be_bytes());
        frame.extend_from_slice(&tcp);
    } else {
        let udp_len = (ip_total - l3_len).min(u16::MAX as usize) as u16;
        frame.extend_from_slice(&udp_len.to_be_bytes());
        frame.extend_from_slice(&[0, 0]);
    }
    debug_assert_eq!(frame.len(), header_len);
    Ok(frame)
}

fn ipv4_checksum(header: &[u8; 20]) -> u16 {
    let mut sum: u32 = header
        .chunks_exact(2)
        .map(|w| u16::from_be_bytes([w[0], w[1]]) as u32)
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}
