//! Identifiers and value types shared by every protocol entity.

use std::fmt;
use std::net::Ipv6Addr;
use std::str::FromStr;

use thiserror::Error;

use super::time::SimTime;

/// Errors raised when constructing a value type from raw input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValueError {
    #[error("mobile node identifier must not be empty")]
    EmptyMnId,
    #[error("invalid link-layer address `{0}`")]
    BadLinkAddr(String),
    #[error("invalid prefix `{0}`")]
    BadPrefix(String),
    #[error("prefix length {0} exceeds 128")]
    PrefixTooLong(u8),
    #[error("prefix {addr}/{len} has bits set beyond its length")]
    HostBitsSet { addr: Ipv6Addr, len: u8 },
    #[error("flow label {0:#x} does not fit in 20 bits")]
    FlowLabelRange(u32),
}

/// Index of a simulated node (LMA, MAG, MIHF, Link SAP, AAA, MN or CN).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u16);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Index of a simulated link. Access links double as MIH link identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub u16);

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l{}", self.0)
    }
}

/// Network Access Identifier of a mobile node, e.g. `user@realm`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MnId(String);

impl MnId {
    pub fn new(value: impl Into<String>) -> Result<Self, ValueError> {
        let value = value.into();
        if value.is_empty() {
            return Err(ValueError::EmptyMnId);
        }
        Ok(MnId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// 48-bit link-layer address of one mobile-node interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkAddr(pub [u8; 6]);

impl fmt::Display for LinkAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

impl FromStr for LinkAddr {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ValueError::BadLinkAddr(s.to_string());
        let mut out = [0u8; 6];
        let mut parts = s.split(':');
        for octet in out.iter_mut() {
            let part = parts.next().ok_or_else(bad)?;
            if part.len() != 2 {
                return Err(bad());
            }
            *octet = u8::from_str_radix(part, 16).map_err(|_| bad())?;
        }
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(LinkAddr(out))
    }
}

/// Modified EUI-64 interface identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InterfaceId(pub [u8; 8]);

impl fmt::Display for InterfaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(":")?;
            }
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Expands a 48-bit link-layer address into a modified EUI-64 identifier:
/// `ff:fe` is inserted between the third and fourth octet and the
/// universal/local bit of the first octet is inverted.
pub fn eui64_from_link_addr(addr: LinkAddr) -> InterfaceId {
    let m = addr.0;
    InterfaceId([m[0] ^ 0x02, m[1], m[2], 0xff, 0xfe, m[3], m[4], m[5]])
}

/// An IPv6 prefix. Bits beyond `len` are always zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prefix {
    addr: Ipv6Addr,
    len: u8,
}

impl Prefix {
    pub fn new(addr: Ipv6Addr, len: u8) -> Result<Self, ValueError> {
        if len > 128 {
            return Err(ValueError::PrefixTooLong(len));
        }
        if u128::from(addr) & !mask(len) != 0 {
            return Err(ValueError::HostBitsSet { addr, len });
        }
        Ok(Prefix { addr, len })
    }

    pub fn addr(&self) -> Ipv6Addr {
        self.addr
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn contains(&self, addr: &Ipv6Addr) -> bool {
        u128::from(*addr) & mask(self.len) == u128::from(self.addr)
    }

    /// True when either prefix contains the other.
    pub fn overlaps(&self, other: &Prefix) -> bool {
        let len = self.len.min(other.len);
        (u128::from(self.addr) ^ u128::from(other.addr)) & mask(len) == 0
    }

    /// Address inside the prefix with the given low-order host bits.
    pub fn host(&self, host_bits: u64) -> Ipv6Addr {
        Ipv6Addr::from(u128::from(self.addr) | (u128::from(host_bits) & !mask(self.len)))
    }
}

pub(crate) fn mask(len: u8) -> u128 {
    match len {
        0 => 0,
        l if l >= 128 => u128::MAX,
        l => u128::MAX << (128 - u32::from(l)),
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.len)
    }
}

impl FromStr for Prefix {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ValueError::BadPrefix(s.to_string());
        let (addr, len) = s.split_once('/').ok_or_else(bad)?;
        let addr: Ipv6Addr = addr.parse().map_err(|_| bad())?;
        let len: u8 = len.parse().map_err(|_| bad())?;
        Prefix::new(addr, len)
    }
}

/// 20-bit IPv6 flow label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowLabel(u32);

impl FlowLabel {
    pub const MAX: u32 = 0xf_ffff;

    pub fn new(value: u32) -> Result<Self, ValueError> {
        if value > Self::MAX {
            return Err(ValueError::FlowLabelRange(value));
        }
        Ok(FlowLabel(value))
    }

    pub fn value(&self) -> u32 {
        self.0
    }
}

/// The 6-tuple that identifies one flow. Equality is exact on all six
/// fields; a zero flow label is a value like any other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrafficSelector {
    pub src_addr: Ipv6Addr,
    pub dst_addr: Ipv6Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
    pub flow_label: FlowLabel,
}

impl fmt::Display for TrafficSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}]:{}->[{}]:{}/{}/{:05x}",
            self.src_addr,
            self.src_port,
            self.dst_addr,
            self.dst_port,
            self.protocol,
            self.flow_label.value()
        )
    }
}

/// A simulated data packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub selector: TrafficSelector,
    pub size: u32,
    pub seq: u64,
    pub created_at: SimTime,
    /// Every node the packet reached, with its arrival time.
    pub path_trace: Vec<(NodeId, SimTime)>,
}

impl Packet {
    pub fn new(selector: TrafficSelector, size: u32, seq: u64, src: NodeId, now: SimTime) -> Self {
        Packet {
            selector,
            size,
            seq,
            created_at: now,
            path_trace: vec![(src, now)],
        }
    }

    pub fn hop(&mut self, node: NodeId, now: SimTime) {
        debug_assert!(self.path_trace.last().is_none_or(|&(_, t)| t <= now));
        self.path_trace.push((node, now));
    }
}
