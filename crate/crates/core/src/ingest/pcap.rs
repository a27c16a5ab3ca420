use std::fs::File;
use std::io::Read;
use std::net::IpAddr;
use std::path::Path;

use etherparse::{EtherType, LaxNetSlice, LaxSlicedPacket, TransportSlice};
use log::warn;
use pcap_parser::pcapng::Block;
use pcap_parser::{create_reader, Linktype, PcapBlockOwned, PcapError};

use crate::error::{Error, Result};
use crate::packet::{Direction, PacketRecord, Proto};

const READ_BUFFER: usize = 1 << 20;
const NANOS_PER_SEC: i128 = 1_000_000_000;

/// Decoded contents of one capture file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Capture {
    /// TCP/UDP packets ordered by timestamp, rebased to the first packet.
    pub packets: Vec<PacketRecord>,
    /// Frames that were not TCP or UDP over IP.
    pub skipped: usize,
    /// Non-zero when the file ended mid-block or had a corrupt tail.
    pub warnings: usize,
}

pub fn parse_capture(path: &Path) -> Result<Capture> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_capture_from(file).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

struct Interface {
    linktype: Linktype,
    units_per_sec: u64,
    offset_secs: i64,
}

struct Raw {
    nanos: i128,
    packet: PacketRecord,
}

/// Parses a PCAP or PCAPNG stream.
pub fn parse_capture_from<R: Read + Send>(reader: R) -> Result<Capture> {
    let mut reader = match create_reader(READ_BUFFER, reader) {
        Ok(r) => r,
        Err(PcapError::Eof) => return Err(Error::format("empty file")),
        Err(PcapError::ReadError) => return Err(Error::format("read error")),
        Err(e) => return Err(Error::format(format!("not a pcap or pcapng capture ({e:?})"))),
    };

    let mut raws: Vec<Raw> = Vec::new();
    let mut skipped = 0usize;
    let mut warnings = 0usize;
    let mut legacy: Option<(Linktype, bool)> = None;
    let mut interfaces: Vec<Interface> = Vec::new();
    let mut last_nanos: i128 = 0;

    loop {
        match reader.next() {
            Ok((offset, block)) => {
                let frame: Option<(i128, u32, Linktype, &[u8])> = match block {
                    PcapBlockOwned::LegacyHeader(ref hdr) => {
                        legacy = Some((hdr.network, hdr.is_nanosecond_precision()));
                        None
                    }
                    PcapBlockOwned::Legacy(ref b) => match legacy {
                        Some((linktype, nano)) => {
                            let frac = if nano { b.ts_usec as i128 } else { b.ts_usec as i128 * 1000 };
                            let nanos = b.ts_sec as i128 * NANOS_PER_SEC + frac;
                            Some((nanos, b.origlen, linktype, b.data))
                        }
                        None => {
                            warnings += 1;
                            None
                        }
                    },
                    PcapBlockOwned::NG(Block::SectionHeader(_)) => {
                        interfaces.clear();
                        None
                    }
                    PcapBlockOwned::NG(Block::InterfaceDescription(ref idb)) => {
                        interfaces.push(Interface {
                            linktype: idb.linktype,
                            units_per_sec: idb.ts_resolution().unwrap_or(1_000_000),
                            offset_secs: idb.ts_offset(),
                        });
                        None
                    }
                    PcapBlockOwned::NG(Block::EnhancedPacket(ref epb)) => {
                        match interfaces.get(epb.if_id as usize) {
                            Some(iface) => {
                                let units = ((epb.ts_high as u64) << 32) | epb.ts_low as u64;
                                let nanos = units as i128 * NANOS_PER_SEC / iface.units_per_sec as i128
                                    + iface.offset_secs as i128 * NANOS_PER_SEC;
                                let caplen = (epb.caplen as usize).min(epb.data.len());
                                Some((nanos, epb.origlen, iface.linktype, &epb.data[..caplen]))
                            }
                            None => {
                                warnings += 1;
                                None
                            }
                        }
                    }
                    // simple packet blocks carry no timestamp
                    PcapBlockOwned::NG(Block::SimplePacket(ref spb)) => interfaces
                        .first()
                        .map(|iface| (last_nanos, spb.origlen, iface.linktype, spb.data)),
                    PcapBlockOwned::NG(_) => None,
                };
                if let Some((nanos, origlen, linktype, data)) = frame {
                    last_nanos = nanos;
                    match decode_frame(linktype, data, origlen) {
                        Some(packet) => raws.push(Raw { nanos, packet }),
                        None => skipped += 1,
                    }
                }
                reader.consume(offset);
            }
            Err(PcapError::Eof) => break,
            Err(PcapError::Incomplete(_)) => {
                if reader.reader_exhausted() {
                    warnings += 1;
                    break;
                }
                reader
                    .refill()
                    .map_err(|e| Error::format(format!("refill failed: {e:?}")))?;
            }
            Err(PcapError::BufferTooSmall) => {
                let size = reader.data().len().max(READ_BUFFER) * 2;
                if size > 64 * READ_BUFFER || !reader.grow(size) {
                    warnings += 1;
                    break;
                }
                reader
                    .refill()
                    .map_err(|e| Error::format(format!("refill failed: {e:?}")))?;
            }
            Err(e) => {
                warnings += 1;
                warn!("stopping at corrupt block: {e:?}");
                break;
            }
        }
    }

    if warnings > 0 {
        warn!("capture truncated or damaged; kept {} packets", raws.len());
    }

    raws.sort_by_key(|r| r.nanos);
    let first = raws.first().map_or(0, |r| r.nanos);
    let packets = raws
        .into_iter()
        .map(|r| PacketRecord {
            timestamp: nanos_to_secs((r.nanos - first) as u64),
            ..r.packet
        })
        .collect();
    Ok(Capture {
        packets,
        skipped,
        warnings,
    })
}

/// Converts a relative nanosecond offset to seconds. Writers and the
/// synthetic generator go through the same conversion so timestamps
/// round-trip bit-exactly.
pub(crate) fn nanos_to_secs(nanos: u64) -> f64 {
    nanos as f64 / 1e9
}

fn decode_frame(linktype: Linktype, data: &[u8], origlen: u32) -> Option<PacketRecord> {
    let sliced = match linktype {
        Linktype::ETHERNET => LaxSlicedPacket::from_ethernet(data).ok()?,
        Linktype::RAW | Linktype::IPV4 | Linktype::IPV6 => LaxSlicedPacket::from_ip(data).ok()?,
        Linktype::LINUX_SLL => {
            if data.len() < 16 {
                return None;
            }
            let ether_type = EtherType(u16::from_be_bytes([data[14], data[15]]));
            LaxSlicedPacket::from_ether_type(ether_type, &data[16..])
        }
        Linktype::NULL | Linktype::LOOP => {
            if data.len() < 4 {
                return None;
            }
            LaxSlicedPacket::from_ip(&data[4..]).ok()?
        }
        _ => return None,
    };

    let (src_ip, dst_ip) = match sliced.net? {
        LaxNetSlice::Ipv4(ip) => {
            let h = ip.header();
            (IpAddr::V4(h.source_addr()), IpAddr::V4(h.destination_addr()))
        }
        LaxNetSlice::Ipv6(ip) => {
            let h = ip.header();
            (IpAddr::V6(h.source_addr()), IpAddr::V6(h.destination_addr()))
        }
        LaxNetSlice::Arp(_) => return None,
    };
    let (src_port, dst_port, proto) = match sliced.transport? {
        TransportSlice::Tcp(tcp) => (tcp.source_port(), tcp.destination_port(), Proto::Tcp),
        TransportSlice::Udp(udp) => (udp.source_port(), udp.destination_port(), Proto::Udp),
        _ => return None,
    };
    Some(PacketRecord {
        timestamp: 0.0,
        length: origlen.max(1),
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        proto,
        direction: Direction::Unknown,
    })
}
