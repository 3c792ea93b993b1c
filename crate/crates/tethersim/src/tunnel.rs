//! The client↔server data tunnel and both NAT stages.
//!
//! Uplink path: the client seals an inner packet under the tunnel key and
//! addresses the outer header dhcp→server; the provider NATs the outer
//! source to its public address with a fresh port mapping; the server opens
//! the envelope and NATs the inner packet toward the internet. The reverse
//! chain inverts each stage. The provider only ever sees sealed bytes.
//!
//! The tunnel also carries rebind probes (after an association change),
//! acks for reliable flows, and erasure-coded shards for unreliable flows.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::crypto::{open, seal, CryptoError, Envelope, KeyRegistry, SymmetricKey};
use crate::model::{
    classify_addr, decode_inner, encode_inner, AddrKind, Address, FlowId, InnerPacket, NodeId,
    Reliability, SimTime,
};

/// UDP-style port both tunnel endpoints bind.
pub const CLIENT_TUNNEL_PORT: u16 = 4500;
pub const SERVER_TUNNEL_PORT: u16 = 4500;

/// Provider NAT draws mapped ports from the dynamic range.
pub const NAT_PORT_FIRST: u16 = 49152;
pub const NAT_PORT_LAST: u16 = 65535;

/// Idle NAT entries are evicted after this many simulated seconds.
pub const NAT_IDLE_EVICT_S: u64 = 120;

/// Resequencing window and the reliable sender's in-flight cap.
pub const RESEQ_WINDOW: u64 = 64;

/// Client-side queue bound while the tunnel is rebinding.
pub const REBIND_QUEUE_CAP: usize = 256;

/// Reliable retransmission: resend after this timeout, give up after
/// [`RETX_MAX_ATTEMPTS`] resends.
pub const RETX_TIMEOUT_US: u64 = 1_000_000;
pub const RETX_MAX_ATTEMPTS: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TunnelState {
    Up,
    Rebinding,
    Down,
}

/// Client data tunnel endpoint state. The VPN address and tunnel key never
/// change for the tunnel's lifetime; that constancy is what makes handoff
/// soft.
#[derive(Debug, Clone)]
pub struct Tunnel {
    pub client: NodeId,
    pub vpn_addr: Address,
    pub key: SymmetricKey,
    pub state: TunnelState,
    tx_seq: BTreeMap<FlowId, u64>,
}

impl Tunnel {
    pub fn new(client: NodeId, vpn_addr: Address, key: SymmetricKey) -> Tunnel {
        Tunnel { client, vpn_addr, key, state: TunnelState::Up, tx_seq: BTreeMap::new() }
    }

    pub fn next_seq(&mut self, flow: FlowId) -> u64 {
        let seq = self.tx_seq.entry(flow).or_insert(0);
        let out = *seq;
        *seq += 1;
        out
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TunnelError {
    #[error("inner source {got:#010x} is not the tunnel vpn address {want:#010x}")]
    AddressViolation { got: u32, want: u32 },
    #[error("tunnel is down")]
    TunnelDown,
    #[error("envelope rejected: {0}")]
    Crypto(#[from] CryptoError),
    #[error("sealed frame malformed")]
    BadFrame,
    #[error("vpn address pool exhausted")]
    AddressExhausted,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NatError {
    #[error("outer source is not an adhoc dhcp address")]
    WrongSourceKind,
    #[error("no mapping for port {0}")]
    NoMapping(u16),
    #[error("nat port space exhausted")]
    NatExhausted,
}

/// What travels inside the sealed tunnel envelope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TunnelFrame {
    Data(InnerPacket),
    /// One shard of an erasure-coded group over encoded inner packets.
    Coded {
        group_id: u64,
        index: u8,
        k: u8,
        n: u8,
        is_parity: bool,
        flow: FlowId,
        /// Sequence of the shard's packet (data shards) or of the group's
        /// first packet (parity shards); for tracing and accounting.
        seq: u64,
        original_lengths: Vec<u32>,
        bytes: Vec<u8>,
    },
    /// Announces the client's current outer path after (re)association.
    Rebind { probe: u64 },
    /// Cumulative ack for a reliable flow, per direction.
    Ack { flow: FlowId, cum_seq: u64 },
}

impl TunnelFrame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            TunnelFrame::Data(p) => {
                out.push(0);
                out.extend_from_slice(&encode_inner(p).expect("valid inner packet"));
            }
            TunnelFrame::Coded {
                group_id,
                index,
                k,
                n,
                is_parity,
                flow,
                seq,
                original_lengths,
                bytes,
            } => {
                out.push(1);
                out.extend_from_slice(&group_id.to_be_bytes());
                out.push(*index);
                out.push(*k);
                out.push(*n);
                out.push(*is_parity as u8);
                out.extend_from_slice(&flow.client.to_bytes());
                out.extend_from_slice(&flow.flow_index.to_be_bytes());
                out.extend_from_slice(&seq.to_be_bytes());
                for len in original_lengths {
                    out.extend_from_slice(&len.to_be_bytes());
                }
                out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
                out.extend_from_slice(bytes);
            }
            TunnelFrame::Rebind { probe } => {
                out.push(2);
                out.extend_from_slice(&probe.to_be_bytes());
            }
            TunnelFrame::Ack { flow, cum_seq } => {
                out.push(3);
                out.extend_from_slice(&flow.client.to_bytes());
                out.extend_from_slice(&flow.flow_index.to_be_bytes());
                out.extend_from_slice(&cum_seq.to_be_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Option<TunnelFrame> {
        let (&tag, rest) = bytes.split_first()?;
        match tag {
            0 => decode_inner(rest).ok().map(TunnelFrame::Data),
            1 => {
                if rest.len() < 8 + 4 + 9 + 8 {
                    return None;
                }
                let group_id = u64::from_be_bytes(rest[0..8].try_into().ok()?);
                let index = rest[8];
                let k = rest[9];
                let n = rest[10];
                let is_parity = rest[11] != 0;
                let client = NodeId::from_bytes(&rest[12..17])?;
                let flow_index = u32::from_be_bytes(rest[17..21].try_into().ok()?);
                let seq = u64::from_be_bytes(rest[21..29].try_into().ok()?);
                let mut pos = 29;
                let mut original_lengths = Vec::with_capacity(k as usize);
                for _ in 0..k {
                    original_lengths
                        .push(u32::from_be_bytes(rest.get(pos..pos + 4)?.try_into().ok()?));
                    pos += 4;
                }
                let blen =
                    u32::from_be_bytes(rest.get(pos..pos + 4)?.try_into().ok()?) as usize;
                pos += 4;
                let data = rest.get(pos..pos + blen)?;
                if pos + blen != rest.len() {
                    return None;
                }
                Some(TunnelFrame::Coded {
                    group_id,
                    index,
                    k,
                    n,
                    is_parity,
                    flow: FlowId { client, flow_index },
                    seq,
                    original_lengths,
                    bytes: data.to_vec(),
                })
            }
            2 => {
                if rest.len() != 8 {
                    return None;
                }
                Some(TunnelFrame::Rebind { probe: u64::from_be_bytes(rest.try_into().ok()?) })
            }
            3 => {
                if rest.len() != 17 {
                    return None;
                }
                Some(TunnelFrame::Ack {
                    flow: FlowId {
                        client: NodeId::from_bytes(&rest[0..5])?,
                        flow_index: u32::from_be_bytes(rest[5..9].try_into().ok()?),
                    },
                    cum_seq: u64::from_be_bytes(rest[9..17].try_into().ok()?),
                })
            }
            _ => None,
        }
    }

    /// Flow id for accounting, if the frame belongs to one.
    pub fn flow(&self) -> Option<FlowId> {
        match self {
            TunnelFrame::Data(p) => Some(p.flow),
            TunnelFrame::Coded { flow, .. } => Some(*flow),
            TunnelFrame::Ack { flow, .. } => Some(*flow),
            TunnelFrame::Rebind { .. } => None,
        }
    }
}

/// Outer header plus the sealed inner frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunnelPacket {
    pub outer_src: Address,
    pub outer_dst: Address,
    pub inner: Envelope,
}

impl TunnelPacket {
    pub fn wire_len(&self) -> usize {
        12 + self.inner.wire_len()
    }
}

/// Seal an arbitrary tunnel frame for the uplink (dhcp → server).
pub fn seal_frame_uplink(t: &Tunnel, client_dhcp: Address, frame: &TunnelFrame) -> TunnelPacket {
    TunnelPacket {
        outer_src: client_dhcp.with_port(CLIENT_TUNNEL_PORT),
        outer_dst: Address::server_public(SERVER_TUNNEL_PORT),
        inner: seal(&t.key, &frame.encode()),
    }
}

/// Seal a frame for the downlink (server → provider public mapping).
pub fn seal_frame_downlink(key: &SymmetricKey, sp_mapped: Address, frame: &TunnelFrame) -> TunnelPacket {
    TunnelPacket {
        outer_src: Address::server_public(SERVER_TUNNEL_PORT),
        outer_dst: sp_mapped,
        inner: seal(key, &frame.encode()),
    }
}

/// Client-side encapsulation of one application packet.
pub fn encapsulate(
    t: &Tunnel,
    client_dhcp: Address,
    p: &InnerPacket,
) -> Result<TunnelPacket, TunnelError> {
    if t.state == TunnelState::Down {
        return Err(TunnelError::TunnelDown);
    }
    if p.src.value != t.vpn_addr.value {
        return Err(TunnelError::AddressViolation { got: p.src.value, want: t.vpn_addr.value });
    }
    Ok(seal_frame_uplink(t, client_dhcp, &TunnelFrame::Data(p.clone())))
}

/// Open a tunnel packet with the endpoint key and decode the frame.
pub fn open_frame(key: &SymmetricKey, tp: &TunnelPacket) -> Result<TunnelFrame, TunnelError> {
    let plain = open(key, &tp.inner)?;
    TunnelFrame::decode(&plain).ok_or(TunnelError::BadFrame)
}

/// Server-side decapsulation of an uplink data packet.
pub fn decapsulate(t: &Tunnel, tp: &TunnelPacket) -> Result<TunnelFrame, TunnelError> {
    open_frame(&t.key, tp)
}

/// Result of an outbound NAT translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NatAction {
    Created(u16),
    Hit(u16),
}

/// Provider NAT: bijective map between (client dhcp, client port) and
/// (provider public address, mapped port).
#[derive(Debug, Clone)]
pub struct NatTable {
    pub owner: NodeId,
    sp_public_value: u32,
    forward: BTreeMap<(u32, u16), u16>,
    reverse: BTreeMap<u16, (u32, u16)>,
    last_used: BTreeMap<u16, SimTime>,
    next_port: u16,
}

impl NatTable {
    pub fn new(owner: NodeId, sp_public: Address) -> NatTable {
        NatTable {
            owner,
            sp_public_value: sp_public.value,
            forward: BTreeMap::new(),
            reverse: BTreeMap::new(),
            last_used: BTreeMap::new(),
            next_port: NAT_PORT_FIRST,
        }
    }

    fn alloc_port(&mut self) -> Result<u16, NatError> {
        let span = (NAT_PORT_LAST - NAT_PORT_FIRST) as u32 + 1;
        for i in 0..span {
            let candidate = NAT_PORT_FIRST
                + ((self.next_port - NAT_PORT_FIRST) as u32 + i).rem_euclid(span) as u16;
            if !self.reverse.contains_key(&candidate) {
                self.next_port = if candidate == NAT_PORT_LAST {
                    NAT_PORT_FIRST
                } else {
                    candidate + 1
                };
                return Ok(candidate);
            }
        }
        Err(NatError::NatExhausted)
    }

    /// Translate an uplink packet's outer source to the public mapping,
    /// creating or refreshing the entry.
    pub fn nat_outbound(
        &mut self,
        tp: &TunnelPacket,
        now: SimTime,
    ) -> Result<(TunnelPacket, NatAction), NatError> {
        if !tp.outer_src.is_kind(AddrKind::AdhocDhcp) {
            return Err(NatError::WrongSourceKind);
        }
        let key = (tp.outer_src.value, tp.outer_src.port);
        let (port, action) = match self.forward.get(&key) {
            Some(&p) => (p, NatAction::Hit(p)),
            None => {
                let p = self.alloc_port()?;
                self.forward.insert(key, p);
                self.reverse.insert(p, key);
                (p, NatAction::Created(p))
            }
        };
        self.last_used.insert(port, now);
        let mut out = tp.clone();
        out.outer_src = Address { value: self.sp_public_value, port };
        Ok((out, action))
    }

    /// Translate a downlink packet's outer destination back to the client.
    pub fn nat_inbound(&mut self, tp: &TunnelPacket, now: SimTime) -> Result<TunnelPacket, NatError> {
        let port = tp.outer_dst.port;
        let &(value, client_port) = self.reverse.get(&port).ok_or(NatError::NoMapping(port))?;
        self.last_used.insert(port, now);
        let mut out = tp.clone();
        out.outer_dst = Address { value, port: client_port };
        Ok(out)
    }

    /// Drop entries idle longer than [`NAT_IDLE_EVICT_S`]. Returns the
    /// evicted (mapped port, original endpoint) pairs.
    pub fn evict_idle(&mut self, now: SimTime) -> Vec<(u16, (u32, u16))> {
        let horizon = NAT_IDLE_EVICT_S * 1_000_000;
        let stale: Vec<u16> = self
            .last_used
            .iter()
            .filter(|(_, &at)| now.saturating_sub(at) > horizon)
            .map(|(&p, _)| p)
            .collect();
        let mut out = Vec::with_capacity(stale.len());
        for port in stale {
            if let Some(key) = self.reverse.remove(&port) {
                self.forward.remove(&key);
                out.push((port, key));
            }
            self.last_used.remove(&port);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    /// The forward and reverse maps must mirror each other exactly.
    pub fn is_bijective(&self) -> bool {
        self.forward.len() == self.reverse.len()
            && self
                .forward
                .iter()
                .all(|(key, port)| self.reverse.get(port) == Some(key))
    }

    /// Remove all mappings belonging to one client dhcp address.
    pub fn remove_client(&mut self, dhcp_value: u32) {
        let ports: Vec<u16> = self
            .forward
            .iter()
            .filter(|((v, _), _)| *v == dhcp_value)
            .map(|(_, &p)| p)
            .collect();
        for port in ports {
            if let Some(key) = self.reverse.remove(&port) {
                self.forward.remove(&key);
            }
            self.last_used.remove(&port);
        }
    }
}

/// Plain datagram between the server and an internet host, after the inner
/// packet left the tunnel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Datagram {
    pub src: Address,
    pub dst: Address,
    pub flow: FlowId,
    pub seq: u64,
    pub payload: Vec<u8>,
    pub reliability: Reliability,
}

impl Datagram {
    pub fn wire_len(&self) -> usize {
        16 + self.payload.len()
    }
}

/// Server NAT toward the internet: (vpn address, flow) ↔ public port.
#[derive(Debug, Clone, Default)]
pub struct ServerNatTable {
    forward: BTreeMap<(u32, FlowId), u16>,
    reverse: BTreeMap<u16, (u32, FlowId)>,
    next_port: u16,
}

impl ServerNatTable {
    pub fn new() -> ServerNatTable {
        ServerNatTable { forward: BTreeMap::new(), reverse: BTreeMap::new(), next_port: NAT_PORT_FIRST }
    }

    fn alloc_port(&mut self) -> Result<u16, NatError> {
        let span = (NAT_PORT_LAST - NAT_PORT_FIRST) as u32 + 1;
        for i in 0..span {
            let candidate = NAT_PORT_FIRST
                + ((self.next_port - NAT_PORT_FIRST) as u32 + i).rem_euclid(span) as u16;
            if !self.reverse.contains_key(&candidate) {
                self.next_port = if candidate == NAT_PORT_LAST {
                    NAT_PORT_FIRST
                } else {
                    candidate + 1
                };
                return Ok(candidate);
            }
        }
        Err(NatError::NatExhausted)
    }

    /// Rewrite an uplink inner packet into an internet datagram with the
    /// server's public source, allocating a stable port per (vpn, flow).
    pub fn server_forward(&mut self, ip: &InnerPacket) -> Result<(Datagram, bool), NatError> {
        let key = (ip.vpn_addr().value, ip.flow);
        let (port, created) = match self.forward.get(&key) {
            Some(&p) => (p, false),
            None => {
                let p = self.alloc_port()?;
                self.forward.insert(key, p);
                self.reverse.insert(p, key);
                (p, true)
            }
        };
        Ok((
            Datagram {
                src: Address::server_public(port),
                dst: ip.dst,
                flow: ip.flow,
                seq: ip.seq,
                payload: ip.payload.clone(),
                reliability: ip.reliability,
            },
            created,
        ))
    }

    /// Map a reply's destination port back to (vpn address value, flow).
    pub fn reverse_lookup(&self, port: u16) -> Option<(u32, FlowId)> {
        self.reverse.get(&port).copied()
    }

    pub fn is_bijective(&self) -> bool {
        self.forward.len() == self.reverse.len()
            && self.forward.iter().all(|(k, p)| self.reverse.get(p) == Some(k))
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }
}

/// Allocator for client VPN addresses at the server.
#[derive(Debug, Clone, Default)]
pub struct VpnPool {
    next: u32,
}

impl VpnPool {
    pub fn new() -> VpnPool {
        VpnPool { next: 0 }
    }

    pub fn alloc(&mut self) -> Result<Address, TunnelError> {
        if self.next > 0xFFFF {
            return Err(TunnelError::AddressExhausted);
        }
        let addr = Address::client_vpn(self.next as u16, 0);
        self.next += 1;
        Ok(addr)
    }
}

/// Open a fresh tunnel: vpn address from the pool, fresh key, state Up.
pub fn open_tunnel(
    pool: &mut VpnPool,
    registry: &mut KeyRegistry,
    rng: &mut impl rand::RngCore,
    client: NodeId,
) -> Result<Tunnel, TunnelError> {
    let vpn_addr = pool.alloc()?;
    let key = registry.keygen(rng);
    Ok(Tunnel::new(client, vpn_addr, key))
}

/// Per-flow in-order delivery with duplicate suppression for reliable flows.
#[derive(Debug, Clone, Default)]
pub struct Resequencer {
    expected: u64,
    buffer: BTreeMap<u64, InnerPacket>,
    pub duplicates: u64,
}

impl Resequencer {
    pub fn new() -> Resequencer {
        Resequencer::default()
    }

    /// Offer one packet; returns packets now deliverable in order.
    pub fn push(&mut self, p: InnerPacket) -> Vec<InnerPacket> {
        if p.seq < self.expected || self.buffer.contains_key(&p.seq) {
            self.duplicates += 1;
            return Vec::new();
        }
        if p.seq >= self.expected + RESEQ_WINDOW {
            // Beyond the window; with the sender honoring the in-flight cap
            // this cannot happen, so treat it as a duplicate-class discard.
            self.duplicates += 1;
            return Vec::new();
        }
        self.buffer.insert(p.seq, p);
        let mut out = Vec::new();
        while let Some(p) = self.buffer.remove(&self.expected) {
            out.push(p);
            self.expected += 1;
        }
        out
    }

    pub fn expected(&self) -> u64 {
        self.expected
    }

    /// Highest contiguous delivered sequence, as carried by cumulative acks.
    pub fn cum_ack(&self) -> Option<u64> {
        self.expected.checked_sub(1)
    }

    pub fn pending(&self) -> usize {
        self.buffer.len()
    }
}

#[derive(Debug, Clone)]
struct PendingRetx {
    packet: InnerPacket,
    attempts: u8,
    next_due: SimTime,
}

/// Sender-side retransmission buffer for one reliable flow direction.
#[derive(Debug, Clone, Default)]
pub struct RetxBuffer {
    unacked: BTreeMap<u64, PendingRetx>,
}

impl RetxBuffer {
    pub fn new() -> RetxBuffer {
        RetxBuffer::default()
    }

    pub fn insert(&mut self, p: InnerPacket, now: SimTime) {
        self.unacked.insert(
            p.seq,
            PendingRetx { packet: p, attempts: 0, next_due: now + RETX_TIMEOUT_US },
        );
    }

    /// Cumulative ack: everything at or below `cum` is delivered.
    pub fn ack_cumulative(&mut self, cum: u64) -> usize {
        let keep = self.unacked.split_off(&(cum + 1));
        let removed = self.unacked.len();
        self.unacked = keep;
        removed
    }

    /// Packets due for retransmission at `now`, and sequences that exhausted
    /// their attempts and count as flow errors.
    pub fn due(&mut self, now: SimTime) -> (Vec<InnerPacket>, Vec<u64>) {
        let mut resend = Vec::new();
        let mut failed = Vec::new();
        for (&seq, pending) in self.unacked.iter_mut() {
            if pending.next_due > now {
                continue;
            }
            if pending.attempts >= RETX_MAX_ATTEMPTS {
                failed.push(seq);
                continue;
            }
            pending.attempts += 1;
            pending.next_due = now + RETX_TIMEOUT_US;
            resend.push(pending.packet.clone());
        }
        for seq in &failed {
            self.unacked.remove(seq);
        }
        (resend, failed)
    }

    pub fn in_flight(&self) -> usize {
        self.unacked.len()
    }

    pub fn window_full(&self) -> bool {
        self.unacked.len() as u64 >= RESEQ_WINDOW
    }
}

/// Classify a tunnel packet's position on the path by its outer header.
pub fn outer_stage(tp: &TunnelPacket) -> Option<&'static str> {
    match (classify_addr(tp.outer_src.value), classify_addr(tp.outer_dst.value)) {
        (Some(AddrKind::AdhocDhcp), Some(AddrKind::ServerPublic)) => Some("pre_nat_uplink"),
        (Some(AddrKind::SpPublic), Some(AddrKind::ServerPublic)) => Some("post_nat_uplink"),
        (Some(AddrKind::ServerPublic), Some(AddrKind::SpPublic)) => Some("pre_nat_downlink"),
        (Some(AddrKind::ServerPublic), Some(AddrKind::AdhocDhcp)) => Some("post_nat_downlink"),
        _ => None,
    }
}
