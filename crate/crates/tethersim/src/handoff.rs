//! Soft-handoff plans: target selection, pre-authentication, execution, and
//! residual-packet draining.
//!
//! A plan moves strictly forward through its phases. Completion requires
//! the client associated with the target and the tunnel up; an abort must
//! leave the client either exactly as before or cleanly rebinding — never
//! half-associated.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{NodeId, SimTime};
use crate::tunnel::TunnelPacket;

/// Default drain window at the old provider.
pub const DEFAULT_DRAIN_TIMER_S: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoffInitiator {
    Client,
    Server,
    Sp,
}

/// How residual packets leave the old provider: back through the server
/// (always feasible) or across a direct inter-provider wireless link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrainMode {
    ViaServer,
    DirectLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandoffPhase {
    Requested,
    PreAuthed,
    Executing,
    Draining,
    Complete,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortReason {
    NoProvider,
    TargetInvalid,
    AssociationFailed,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HandoffError {
    #[error("no viable handoff candidate")]
    NoProvider,
    #[error("phase transition {from:?} -> {to:?} is not monotone")]
    BadTransition { from: HandoffPhase, to: HandoffPhase },
}

/// One client's move from one provider to another.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HandoffPlan {
    pub id: u64,
    pub client: NodeId,
    pub from: Option<NodeId>,
    pub to: NodeId,
    pub initiator: HandoffInitiator,
    pub drain_mode: DrainMode,
    pub drain_timer_s: u64,
    pub phase: HandoffPhase,
    pub requested_at: SimTime,
    pub abort_reason: Option<AbortReason>,
}

impl HandoffPlan {
    pub fn new(
        id: u64,
        client: NodeId,
        from: Option<NodeId>,
        to: NodeId,
        initiator: HandoffInitiator,
        drain_mode: DrainMode,
        drain_timer_s: u64,
        now: SimTime,
    ) -> HandoffPlan {
        HandoffPlan {
            id,
            client,
            from,
            to,
            initiator,
            drain_mode,
            drain_timer_s,
            phase: HandoffPhase::Requested,
            requested_at: now,
            abort_reason: None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.phase, HandoffPhase::Complete | HandoffPhase::Aborted)
    }

    /// Advance the phase; only forward moves are legal.
    pub fn advance(&mut self, to: HandoffPhase) -> Result<(), HandoffError> {
        let legal = match (self.phase, to) {
            (HandoffPhase::Requested, HandoffPhase::PreAuthed)
            | (HandoffPhase::PreAuthed, HandoffPhase::Executing)
            | (HandoffPhase::Executing, HandoffPhase::Draining)
            | (HandoffPhase::Draining, HandoffPhase::Complete) => true,
            (from, HandoffPhase::Aborted) => !matches!(from, HandoffPhase::Complete),
            _ => false,
        };
        if !legal {
            return Err(HandoffError::BadTransition { from: self.phase, to });
        }
        self.phase = to;
        Ok(())
    }

    pub fn abort(&mut self, reason: AbortReason) {
        if !self.is_terminal() {
            self.phase = HandoffPhase::Aborted;
            self.abort_reason = Some(reason);
        }
    }
}

/// Pick the handoff target: highest client utility, ties to the lower id.
/// Candidates are (provider, utility) pairs the server computed.
pub fn select_target(candidates: &[(NodeId, f64)]) -> Result<NodeId, HandoffError> {
    candidates
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(sp, _)| *sp)
        .ok_or(HandoffError::NoProvider)
}

/// Residual packets held at the old provider for one departing client.
#[derive(Debug, Clone, Default)]
pub struct ResidualQueue {
    pub downlink: Vec<TunnelPacket>,
    pub deadline: SimTime,
}

impl ResidualQueue {
    pub fn new(deadline: SimTime) -> ResidualQueue {
        ResidualQueue { downlink: Vec::new(), deadline }
    }

    pub fn capture(&mut self, tp: TunnelPacket) {
        self.downlink.push(tp);
    }

    pub fn is_empty(&self) -> bool {
        self.downlink.is_empty()
    }

    /// Take everything still eligible for draining at `now`; packets past
    /// the deadline are returned separately as drops.
    pub fn drain(&mut self, now: SimTime) -> (Vec<TunnelPacket>, Vec<TunnelPacket>) {
        let taken = std::mem::take(&mut self.downlink);
        if now > self.deadline {
            (Vec::new(), taken)
        } else {
            (taken, Vec::new())
        }
    }
}
