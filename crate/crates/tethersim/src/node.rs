//! Behavioral state for the three principals: clients, service providers,
//! and the server, plus the server's connectivity graph.
//!
//! Everything here is plain state plus pure decision functions; the event
//! engine owns the instances and drives them with simulated messages.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use crate::handshake::Directory;
use crate::model::{Address, NodeId, QosPromise, SimTime, DHCP_BASE};
use crate::policy::{
    client_utility, sp_utility, ClientWeights, GoodnessMetric, ServiceOffer, SpUtilityInputs,
    SpWeights,
};

/// Beacons arrive once per simulated second.
pub const BEACON_INTERVAL_US: u64 = 1_000_000;

/// A beacon older than this no longer counts during discovery.
pub const BEACON_FRESHNESS_US: u64 = 3_000_000;

/// Consecutive missed beacons before a client declares its provider gone.
pub const MISSED_BEACON_LIMIT: u32 = 3;

/// Graph edges silent longer than this are pruned.
pub const GRAPH_STALE_US: u64 = 30_000_000;

/// Default standby slots per provider.
pub const DEFAULT_LIGHTWEIGHT_SLOTS: u32 = 4;

/// Fraction of initial energy kept in reserve when admitting.
pub const ENERGY_RESERVE_FRACTION: f64 = 0.10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NodeError {
    #[error("no provider in range with a fresh beacon")]
    NoProvider,
    #[error("dhcp pool exhausted at this provider")]
    DhcpExhausted,
    #[error("client is not associated here")]
    NotAssociated,
}

/// WWAN backhaul parameters; the protocol tag only selects bandwidth and
/// latency defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WwanLink {
    pub protocol: String,
    pub bandwidth_bps: u64,
    pub latency_us: u64,
    pub loss_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionMode {
    Seamless,
    Manual,
}

/// Why an admission request was denied, or that it was admitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmitDecision {
    Admit,
    DenyUnregistered,
    DenyManual,
    DenyCapacity,
    DenyEnergy,
    DenyUtility,
}

impl AdmitDecision {
    pub fn admitted(self) -> bool {
        self == AdmitDecision::Admit
    }
}

/// An open service session at a provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmittedSession {
    pub promise: QosPromise,
    pub opened_at: SimTime,
    pub bytes_carried: u64,
}

/// Service provider state.
#[derive(Debug, Clone)]
pub struct SpState {
    pub id: NodeId,
    pub public_addr: Address,
    pub wwan: WwanLink,
    pub energy_mj: u64,
    pub initial_energy_mj: u64,
    pub energy_rate_per_client_mj: u64,
    pub local_load_bps: u64,
    pub registered: bool,
    /// Last goodness value pushed by the server; advertised in beacons.
    pub goodness_ppm: u32,
    pub admitted: BTreeMap<NodeId, AdmittedSession>,
    pub provisioned_fraction: f64,
    pub lightweight_slots: u32,
    pub standby: BTreeSet<NodeId>,
    pub admission_mode: AdmissionMode,
    /// Scenario-scripted manual accept/deny decisions.
    pub manual_overrides: BTreeMap<NodeId, bool>,
    pub cost_milli_per_s: u64,
    pub service_until: SimTime,
    dhcp_in_use: BTreeMap<NodeId, Address>,
    dhcp_next_host: u8,
}

impl SpState {
    pub fn new(id: NodeId, wwan: WwanLink, energy_mj: u64, energy_rate_per_client_mj: u64) -> SpState {
        let index = id.index as u8;
        SpState {
            id,
            public_addr: Address::sp_public(index, 0),
            wwan,
            energy_mj,
            initial_energy_mj: energy_mj,
            energy_rate_per_client_mj,
            local_load_bps: 0,
            registered: false,
            goodness_ppm: GoodnessMetric::INITIAL_PPM,
            admitted: BTreeMap::new(),
            provisioned_fraction: 0.8,
            lightweight_slots: DEFAULT_LIGHTWEIGHT_SLOTS,
            standby: BTreeSet::new(),
            admission_mode: AdmissionMode::Seamless,
            manual_overrides: BTreeMap::new(),
            cost_milli_per_s: 1,
            service_until: SimTime::ZERO,
            dhcp_in_use: BTreeMap::new(),
            dhcp_next_host: 1,
        }
    }

    pub fn promised_total_bps(&self) -> u64 {
        self.admitted.values().map(|s| s.promise.avg_bandwidth_bps).sum()
    }

    pub fn provisioned_cap_bps(&self) -> u64 {
        (self.wwan.bandwidth_bps as f64 * self.provisioned_fraction) as u64
    }

    /// Bandwidth advertised in beacons: backhaul minus promises and local
    /// load, floored at zero.
    pub fn avail_bandwidth_bps(&self) -> u64 {
        self.wwan
            .bandwidth_bps
            .saturating_sub(self.promised_total_bps())
            .saturating_sub(self.local_load_bps)
    }

    pub fn remaining_duration_s(&self, now: SimTime) -> u64 {
        self.service_until.saturating_sub(now) / 1_000_000
    }

    /// Admission check: registration gate, manual override, provisioned
    /// capacity, energy reserve, then utility above threshold.
    pub fn admit_decision(&self, client: NodeId, req: &QosPromise, w: &SpWeights) -> AdmitDecision {
        if !self.registered {
            return AdmitDecision::DenyUnregistered;
        }
        if self.admission_mode == AdmissionMode::Manual
            && self.manual_overrides.get(&client) != Some(&true)
        {
            return AdmitDecision::DenyManual;
        }
        if self.promised_total_bps() + req.avg_bandwidth_bps > self.provisioned_cap_bps() {
            return AdmitDecision::DenyCapacity;
        }
        let reserve = self.initial_energy_mj as f64 * ENERGY_RESERVE_FRACTION;
        let needed_mj = self.energy_rate_per_client_mj as f64 * req.duration_s as f64;
        if needed_mj > self.energy_mj as f64 - reserve {
            return AdmitDecision::DenyEnergy;
        }
        let inputs = SpUtilityInputs {
            energy_j: self.energy_mj as f64 / 1000.0,
            energy_rate_per_client_j: self.energy_rate_per_client_mj as f64 / 1000.0,
            local_load_bps: self.local_load_bps,
            backhaul_bps: self.wwan.bandwidth_bps,
            goodness: self.goodness_ppm as f64 / 1_000_000.0,
        };
        if sp_utility(&inputs, req, w) > w.threshold {
            AdmitDecision::Admit
        } else {
            AdmitDecision::DenyUtility
        }
    }

    /// Open a session and lease a dhcp address from this provider's block.
    pub fn admit(&mut self, client: NodeId, req: QosPromise, now: SimTime) -> Result<Address, NodeError> {
        let addr = self.alloc_dhcp(client)?;
        self.admitted
            .insert(client, AdmittedSession { promise: req, opened_at: now, bytes_carried: 0 });
        self.standby.remove(&client);
        Ok(addr)
    }

    fn alloc_dhcp(&mut self, client: NodeId) -> Result<Address, NodeError> {
        if let Some(addr) = self.dhcp_in_use.get(&client) {
            return Ok(*addr);
        }
        let in_use: BTreeSet<u8> = self
            .dhcp_in_use
            .values()
            .map(|a| (a.value & 0xFF) as u8)
            .collect();
        for i in 0..255u16 {
            let host = (((self.dhcp_next_host as u16 - 1) + i) % 255 + 1) as u8;
            if !in_use.contains(&host) {
                self.dhcp_next_host = if host == 255 { 1 } else { host + 1 };
                let offset = ((self.id.index as u16) << 8) | host as u16;
                let addr = Address::adhoc_dhcp(offset, crate::tunnel::CLIENT_TUNNEL_PORT);
                self.dhcp_in_use.insert(client, addr);
                return Ok(addr);
            }
        }
        Err(NodeError::DhcpExhausted)
    }

    pub fn dhcp_of(&self, client: NodeId) -> Option<Address> {
        self.dhcp_in_use.get(&client).copied()
    }

    pub fn release_dhcp(&mut self, client: NodeId) {
        self.dhcp_in_use.remove(&client);
    }

    /// No two simultaneously associated clients share an address.
    pub fn dhcp_unique(&self) -> bool {
        let values: BTreeSet<u32> = self.dhcp_in_use.values().map(|a| a.value).collect();
        values.len() == self.dhcp_in_use.len()
    }

    /// Close a session, returning its record fields for the server.
    pub fn close_session(&mut self, client: NodeId) -> Option<AdmittedSession> {
        self.release_dhcp(client);
        self.admitted.remove(&client)
    }

    /// A standby slot for fast promotion during handoff.
    pub fn open_lightweight(&mut self, client: NodeId) -> bool {
        if self.standby.contains(&client) {
            return true;
        }
        if (self.standby.len() as u32) < self.lightweight_slots {
            self.standby.insert(client);
            true
        } else {
            false
        }
    }

    /// Beacon contents at `now`, if this provider may beacon at all.
    pub fn beacon(&self, now: SimTime, position: (f64, f64)) -> Option<Beacon> {
        if !self.registered || self.energy_mj == 0 {
            return None;
        }
        Some(Beacon {
            sp: self.id,
            goodness_ppm: self.goodness_ppm,
            avail_bandwidth_bps: self.avail_bandwidth_bps(),
            cost_milli_per_s: self.cost_milli_per_s,
            remaining_duration_s: self.remaining_duration_s(now),
            at: now,
            position,
        })
    }

    /// One-second energy tick: admitted clients each burn the service rate.
    pub fn energy_tick(&mut self) {
        let burn = self.energy_rate_per_client_mj * self.admitted.len() as u64;
        self.energy_mj = self.energy_mj.saturating_sub(burn);
    }

    /// Σ promised ≤ provisioned fraction × backhaul, at all times.
    pub fn admission_sound(&self) -> bool {
        self.promised_total_bps() <= self.provisioned_cap_bps()
    }
}

/// Periodic provider advertisement: static goodness plus dynamic service
/// terms, stamped with time and position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beacon {
    pub sp: NodeId,
    pub goodness_ppm: u32,
    pub avail_bandwidth_bps: u64,
    pub cost_milli_per_s: u64,
    pub remaining_duration_s: u64,
    pub at: SimTime,
    pub position: (f64, f64),
}

impl Beacon {
    pub fn offer(&self) -> ServiceOffer {
        ServiceOffer {
            cost_milli_per_s: self.cost_milli_per_s,
            remaining_duration_s: self.remaining_duration_s,
            goodness: self.goodness_ppm as f64 / 1_000_000.0,
            avail_bandwidth_bps: self.avail_bandwidth_bps,
        }
    }

    pub fn fresh(&self, now: SimTime) -> bool {
        now.saturating_sub(self.at) <= BEACON_FRESHNESS_US
    }
}

/// Client state.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: NodeId,
    pub needs: QosPromise,
    pub radios: u32,
    pub dhcp_addr: Option<Address>,
    pub association: Option<NodeId>,
    pub lightweight: BTreeSet<NodeId>,
}

impl ClientState {
    pub fn new(id: NodeId, needs: QosPromise, radios: u32) -> ClientState {
        ClientState {
            id,
            needs,
            radios,
            dhcp_addr: None,
            association: None,
            lightweight: BTreeSet::new(),
        }
    }

    /// dhcp present iff associated, and the association never sits in the
    /// lightweight set.
    pub fn invariants_hold(&self) -> bool {
        (self.dhcp_addr.is_some() == self.association.is_some())
            && self.association.map_or(true, |sp| !self.lightweight.contains(&sp))
    }
}

/// Rank fresh candidate beacons by client utility, ties to the lower
/// provider id.
pub fn rank_candidates(
    needs: &QosPromise,
    heard: &[(Beacon, f64)],
    link_capacity_bps: u64,
    w: &ClientWeights,
    now: SimTime,
) -> Result<Vec<(NodeId, f64)>, NodeError> {
    let mut scored: Vec<(NodeId, f64)> = Vec::new();
    for (beacon, link_quality) in heard {
        if !beacon.fresh(now) {
            continue;
        }
        if let Ok(u) = client_utility(needs, &beacon.offer(), *link_quality, link_capacity_bps, w) {
            scored.push((beacon.sp, u));
        }
    }
    if scored.is_empty() {
        return Err(NodeError::NoProvider);
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    Ok(scored)
}

/// One observation edge in the server's connectivity graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub rssi: f64,
    pub at: SimTime,
}

/// Geographic connectivity knowledge at the server, built from beacon
/// reports.
#[derive(Debug, Clone, Default)]
pub struct ConnectivityGraph {
    pub positions: BTreeMap<NodeId, (f64, f64)>,
    edges: BTreeMap<(NodeId, NodeId), GraphEdge>,
}

impl ConnectivityGraph {
    pub fn new() -> ConnectivityGraph {
        ConnectivityGraph::default()
    }

    /// Fold one neighborhood report into the graph.
    pub fn update(
        &mut self,
        observer: NodeId,
        position: (f64, f64),
        heard: &[(NodeId, f64)],
        now: SimTime,
    ) {
        self.positions.insert(observer, position);
        for (sp, rssi) in heard {
            self.edges.insert((observer, *sp), GraphEdge { rssi: *rssi, at: now });
        }
    }

    /// Drop edges not refreshed within the staleness window.
    pub fn prune(&mut self, now: SimTime) -> usize {
        let before = self.edges.len();
        self.edges.retain(|_, e| now.saturating_sub(e.at) <= GRAPH_STALE_US);
        before - self.edges.len()
    }

    /// Providers recently observed by `node`, strongest signal first.
    pub fn sps_near(&self, node: NodeId, now: SimTime) -> Vec<(NodeId, f64)> {
        let mut out: Vec<(NodeId, f64)> = self
            .edges
            .iter()
            .filter(|((obs, _), e)| *obs == node && now.saturating_sub(e.at) <= GRAPH_STALE_US)
            .map(|((_, sp), e)| (*sp, e.rssi))
            .collect();
        out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    pub fn edge(&self, observer: NodeId, sp: NodeId) -> Option<GraphEdge> {
        self.edges.get(&(observer, sp)).copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Server-side registry and policy state.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub directory: Directory,
    pub goodness: BTreeMap<NodeId, GoodnessMetric>,
    pub graph: ConnectivityGraph,
    pub alpha: f64,
}

impl ServerState {
    pub fn new(alpha: f64) -> ServerState {
        ServerState {
            directory: Directory::new(),
            goodness: BTreeMap::new(),
            graph: ConnectivityGraph::new(),
            alpha,
        }
    }

    pub fn goodness_of(&mut self, sp: NodeId) -> GoodnessMetric {
        let alpha = self.alpha;
        *self.goodness.entry(sp).or_insert_with(|| GoodnessMetric::new(alpha))
    }
}

/// Euclidean range check for the adhoc medium.
pub fn in_range(a: (f64, f64), b: (f64, f64), range_m: f64) -> bool {
    distance(a, b) <= range_m
}

pub fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Link quality proxy in [0,1]: 1 at zero distance, 0 at the range edge.
pub fn link_quality(a: (f64, f64), b: (f64, f64), range_m: f64) -> f64 {
    if range_m <= 0.0 {
        return 0.0;
    }
    (1.0 - distance(a, b) / range_m).clamp(0.0, 1.0)
}
