//! Shared identifiers, addresses, packets, and flows, with the canonical
//! byte encoding used in traces and on simulated links.
//!
//! Address kinds occupy disjoint numeric ranges so that a header written to
//! the wrong field is detectable from the value alone.

use serde::{Deserialize, Serialize};
use std::fmt;

use thiserror::Error;

/// Default payload MTU for inner packets, leaving room for tunnel overhead
/// under a notional 1500-byte link.
pub const DEFAULT_MTU: usize = 1400;

/// Fixed size of the inner-packet header produced by [`encode_inner`].
pub const INNER_HEADER_LEN: usize = 34;

/// Simulation time in integer microseconds. No floating-point time anywhere.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    /// Seconds expressed in the file format (f64) converted to whole micros.
    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * 1_000_000.0).round() as u64)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1_000_000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl std::ops::Add<u64> for SimTime {
    type Output = SimTime;
    fn add(self, us: u64) -> SimTime {
        SimTime(self.0 + us)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}s", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Node role. The ordering (clients < providers < server < hosts) is part of
/// the [`NodeId`] total order used for deterministic tie-breaking.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Client,
    ServiceProvider,
    Server,
    InternetHost,
}

impl Role {
    pub fn code(self) -> u8 {
        match self {
            Role::Client => 0,
            Role::ServiceProvider => 1,
            Role::Server => 2,
            Role::InternetHost => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Role> {
        match code {
            0 => Some(Role::Client),
            1 => Some(Role::ServiceProvider),
            2 => Some(Role::Server),
            3 => Some(Role::InternetHost),
            _ => None,
        }
    }
}

/// Identity of a simulated node, unique within a scenario and totally
/// ordered by `(role, index)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct NodeId {
    pub role: Role,
    pub index: u32,
}

impl NodeId {
    pub fn client(index: u32) -> NodeId {
        NodeId { role: Role::Client, index }
    }

    pub fn sp(index: u32) -> NodeId {
        NodeId { role: Role::ServiceProvider, index }
    }

    pub fn server() -> NodeId {
        NodeId { role: Role::Server, index: 0 }
    }

    pub fn host(index: u32) -> NodeId {
        NodeId { role: Role::InternetHost, index }
    }

    pub fn to_bytes(self) -> [u8; 5] {
        let mut b = [0u8; 5];
        b[0] = self.role.code();
        b[1..5].copy_from_slice(&self.index.to_be_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> Option<NodeId> {
        if b.len() < 5 {
            return None;
        }
        Some(NodeId {
            role: Role::from_code(b[0])?,
            index: u32::from_be_bytes(b[1..5].try_into().unwrap()),
        })
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.role {
            Role::Client => write!(f, "c{}", self.index),
            Role::ServiceProvider => write!(f, "sp{}", self.index),
            Role::Server => write!(f, "server{}", self.index),
            Role::InternetHost => write!(f, "host{}", self.index),
        }
    }
}

/// Address kind, recoverable from the numeric value alone.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum AddrKind {
    ClientVpn,
    AdhocDhcp,
    SpPublic,
    ServerPublic,
    Internet,
}

pub const VPN_BASE: u32 = 0x0A40_0000;
pub const VPN_END: u32 = 0x0A40_FFFF;
pub const DHCP_BASE: u32 = 0x0A00_0000;
pub const DHCP_END: u32 = 0x0A00_FFFF;
pub const SP_PUBLIC_BASE: u32 = 0xCB00_7100;
pub const SP_PUBLIC_END: u32 = 0xCB00_71FF;
pub const SERVER_PUBLIC_VALUE: u32 = 0xCB00_7201;
pub const INTERNET_BASE: u32 = 0x5B00_0000;
pub const INTERNET_END: u32 = 0x5BFF_FFFF;

/// Classify a 32-bit address value into its kind, if it falls in any of the
/// simulation-internal ranges.
pub fn classify_addr(value: u32) -> Option<AddrKind> {
    match value {
        VPN_BASE..=VPN_END => Some(AddrKind::ClientVpn),
        DHCP_BASE..=DHCP_END => Some(AddrKind::AdhocDhcp),
        SP_PUBLIC_BASE..=SP_PUBLIC_END => Some(AddrKind::SpPublic),
        SERVER_PUBLIC_VALUE => Some(AddrKind::ServerPublic),
        INTERNET_BASE..=INTERNET_END => Some(AddrKind::Internet),
        _ => None,
    }
}

/// A simulation address: a 32-bit value in one of the disjoint kind ranges
/// plus a 16-bit port. Port 0 means "unassigned".
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Address {
    pub value: u32,
    pub port: u16,
}

impl Address {
    /// Build from a raw value, rejecting values outside every kind range.
    pub fn from_value(value: u32, port: u16) -> Result<Address, ModelError> {
        classify_addr(value)
            .map(|_| Address { value, port })
            .ok_or(ModelError::BadAddress { value })
    }

    pub fn client_vpn(offset: u16, port: u16) -> Address {
        Address { value: VPN_BASE + offset as u32, port }
    }

    pub fn adhoc_dhcp(offset: u16, port: u16) -> Address {
        Address { value: DHCP_BASE + offset as u32, port }
    }

    pub fn sp_public(offset: u8, port: u16) -> Address {
        Address { value: SP_PUBLIC_BASE + offset as u32, port }
    }

    pub fn server_public(port: u16) -> Address {
        Address { value: SERVER_PUBLIC_VALUE, port }
    }

    pub fn internet(offset: u32, port: u16) -> Address {
        debug_assert!(INTERNET_BASE + offset <= INTERNET_END);
        Address { value: INTERNET_BASE + offset, port }
    }

    pub fn kind(&self) -> Option<AddrKind> {
        classify_addr(self.value)
    }

    pub fn is_kind(&self, kind: AddrKind) -> bool {
        self.kind() == Some(kind)
    }

    pub fn with_port(self, port: u16) -> Address {
        Address { value: self.value, port }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.value;
        write!(
            f,
            "{}.{}.{}.{}:{}",
            (v >> 24) & 0xFF,
            (v >> 16) & 0xFF,
            (v >> 8) & 0xFF,
            v & 0xFF,
            self.port
        )
    }
}

/// Application flow identity: the originating client plus a per-client index.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct FlowId {
    pub client: NodeId,
    pub flow_index: u32,
}

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/f{}", self.client, self.flow_index)
    }
}

/// Transport expectation of a flow. Reliable flows are retransmitted and
/// resequenced by the tunnel endpoints; unreliable flows are not.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Reliability {
    Reliable,
    Unreliable,
}

/// Application-level packet as seen inside the tunnel: VPN address on the
/// client side, internet address on the far side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerPacket {
    pub src: Address,
    pub dst: Address,
    pub flow: FlowId,
    pub seq: u64,
    pub payload: Vec<u8>,
    pub reliability: Reliability,
}

impl InnerPacket {
    /// Check orientation (vpn→internet or internet→vpn) and payload size.
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok_up = self.src.is_kind(AddrKind::ClientVpn) && self.dst.is_kind(AddrKind::Internet);
        let ok_down =
            self.src.is_kind(AddrKind::Internet) && self.dst.is_kind(AddrKind::ClientVpn);
        if !ok_up && !ok_down {
            return Err(ModelError::BadOrientation {
                src: self.src.value,
                dst: self.dst.value,
            });
        }
        if self.payload.len() > DEFAULT_MTU {
            return Err(ModelError::PayloadOverMtu { len: self.payload.len() });
        }
        Ok(())
    }

    /// The client VPN address of the packet, whichever side it sits on.
    pub fn vpn_addr(&self) -> Address {
        if self.src.is_kind(AddrKind::ClientVpn) {
            self.src
        } else {
            self.dst
        }
    }
}

/// QoS terms attached to an admission: expected average bandwidth, service
/// duration, and the advertised price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QosPromise {
    pub avg_bandwidth_bps: u64,
    pub duration_s: u64,
    pub cost_milli_per_s: u64,
}

impl QosPromise {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.avg_bandwidth_bps == 0 || self.duration_s == 0 || self.cost_milli_per_s == 0 {
            return Err(ModelError::BadPromise);
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("address value {value:#010x} is outside every kind range")]
    BadAddress { value: u32 },
    #[error("packet orientation invalid: src {src:#010x} dst {dst:#010x}")]
    BadOrientation { src: u32, dst: u32 },
    #[error("payload of {len} bytes exceeds MTU of {DEFAULT_MTU}")]
    PayloadOverMtu { len: usize },
    #[error("qos promise fields must all be positive")]
    BadPromise,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("payload of {len} bytes exceeds MTU of {DEFAULT_MTU}")]
    PayloadOverMtu { len: usize },
    #[error("packet invalid: {0}")]
    Invalid(ModelError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("unknown role code {0}")]
    BadRole(u8),
    #[error("bad address value {0:#010x}")]
    BadAddress(u32),
    #[error("bad reliability tag {0}")]
    BadReliability(u8),
    #[error("declared payload length {declared} does not match remaining {remaining}")]
    LengthMismatch { declared: usize, remaining: usize },
    #[error("declared payload length {0} exceeds MTU")]
    PayloadOverMtu(usize),
    #[error("packet orientation invalid")]
    BadOrientation,
}

/// Canonical encoding: fixed field order, big-endian integers,
/// length-prefixed payload. Deterministic and self-delimiting.
pub fn encode_inner(p: &InnerPacket) -> Result<Vec<u8>, EncodeError> {
    if p.payload.len() > DEFAULT_MTU {
        return Err(EncodeError::PayloadOverMtu { len: p.payload.len() });
    }
    p.validate().map_err(EncodeError::Invalid)?;
    let mut out = Vec::with_capacity(INNER_HEADER_LEN + p.payload.len());
    out.extend_from_slice(&p.src.value.to_be_bytes());
    out.extend_from_slice(&p.src.port.to_be_bytes());
    out.extend_from_slice(&p.dst.value.to_be_bytes());
    out.extend_from_slice(&p.dst.port.to_be_bytes());
    out.push(p.flow.client.role.code());
    out.extend_from_slice(&p.flow.client.index.to_be_bytes());
    out.extend_from_slice(&p.flow.flow_index.to_be_bytes());
    out.extend_from_slice(&p.seq.to_be_bytes());
    out.push(match p.reliability {
        Reliability::Reliable => 0,
        Reliability::Unreliable => 1,
    });
    out.extend_from_slice(&(p.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&p.payload);
    debug_assert_eq!(out.len(), INNER_HEADER_LEN + p.payload.len());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.pos + n > self.buf.len() {
            return Err(DecodeError::Truncated { need: self.pos + n, have: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Inverse of [`encode_inner`] on valid input; any malformed input yields a
/// [`DecodeError`], never a panic.
pub fn decode_inner(b: &[u8]) -> Result<InnerPacket, DecodeError> {
    let mut r = Reader { buf: b, pos: 0 };
    let src_value = r.u32()?;
    let src_port = r.u16()?;
    let dst_value = r.u32()?;
    let dst_port = r.u16()?;
    let role = Role::from_code(r.u8()?).ok_or(DecodeError::BadRole(b[12]))?;
    let client_index = r.u32()?;
    let flow_index = r.u32()?;
    let seq = r.u64()?;
    let rel = match r.u8()? {
        0 => Reliability::Reliable,
        1 => Reliability::Unreliable,
        other => return Err(DecodeError::BadReliability(other)),
    };
    let payload_len = r.u32()? as usize;
    if payload_len > DEFAULT_MTU {
        return Err(DecodeError::PayloadOverMtu(payload_len));
    }
    let remaining = b.len() - r.pos;
    if payload_len != remaining {
        return Err(DecodeError::LengthMismatch { declared: payload_len, remaining });
    }
    let payload = r.take(payload_len)?.to_vec();

    let src = Address::from_value(src_value, src_port)
        .map_err(|_| DecodeError::BadAddress(src_value))?;
    let dst = Address::from_value(dst_value, dst_port)
        .map_err(|_| DecodeError::BadAddress(dst_value))?;
    let p = InnerPacket {
        src,
        dst,
        flow: FlowId { client: NodeId { role, index: client_index }, flow_index },
        seq,
        payload,
        reliability: rel,
    };
    p.validate().map_err(|e| match e {
        ModelError::PayloadOverMtu { len } => DecodeError::PayloadOverMtu(len),
        _ => DecodeError::BadOrientation,
    })?;
    Ok(p)
}
