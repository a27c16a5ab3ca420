//! Packet and flow-key types shared by every pipeline stage.

use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

/// Transport protocol of a packet. Only TCP and UDP survive ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proto {
    Tcp,
    Udp,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Outgoing,
    Incoming,
    Unknown,
}

/// One observed packet.
///
/// `timestamp` is in seconds relative to the first packet of its capture and
/// `length` is the full frame length as recorded by the capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub timestamp: f64,
    pub length: u32,
    pub src_ip: IpAddr,
    pub dst_ip: IpAddr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: Proto,
    pub direction: Direction,
}

impl PacketRecord {
    pub fn src(&self) -> Endpoint {
        Endpoint::new(self.src_ip, self.src_port)
    }

    pub fn dst(&self) -> Endpoint {
        Endpoint::new(self.dst_ip, self.dst_port)
    }

    /// Bidirectional flow key; both directions of a conversation map to the same key.
    pub fn flow_key(&self) -> FlowKey {
        FlowKey::new(self.src(), self.dst(), self.proto)
    }

    /// The same packet travelling the other way.
    pub fn reversed(&self) -> PacketRecord {
        PacketRecord {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            direction: match self.direction {
                Direction::Outgoing => Direction::Incoming,
                Direction::Incoming => Direction::Outgoing,
                Direction::Unknown => Direction::Unknown,
            },
            ..*self
        }
    }
}

/// An `(ip, port)` pair, ordered lexicographically by ip then port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint {
    pub ip: IpAddr,
    pub port: u16,
}

impl Endpoint {
    pub fn new(ip: IpAddr, port: u16) -> Self {
        Endpoint { ip, port }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ip {
            IpAddr::V4(ip) => write!(f, "{ip}:{}", self.port),
            IpAddr::V6(ip) => write!(f, "[{ip}]:{}", self.port),
        }
    }
}

/// Canonical 5-tuple. Invariant: `endpoint_a <= endpoint_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    endpoint_a: Endpoint,
    endpoint_b: Endpoint,
    proto: Proto,
}

impl FlowKey {
    pub fn new(x: Endpoint, y: Endpoint, proto: Proto) -> Self {
        let (endpoint_a, endpoint_b) = if x <= y { (x, y) } else { (y, x) };
        FlowKey {
            endpoint_a,
            endpoint_b,
            proto,
        }
    }

    pub fn endpoint_a(&self) -> Endpoint {
        self.endpoint_a
    }

    pub fn endpoint_b(&self) -> Endpoint {
        self.endpoint_b
    }

    pub fn proto(&self) -> Proto {
        self.proto
    }

    pub fn touches(&self, ip: IpAddr) -> bool {
        self.endpoint_a.ip == ip || self.endpoint_b.ip == ip
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} {} <-> {}",
            self.proto, self.endpoint_a, self.endpoint_b
        )
    }
}
