//! Parallel multi-provider session plans and single-radio time scheduling.
//!
//! A plan maps the fractional allocation from the policy module onto radios;
//! with fewer radios than legs the client time-shares one radio over a
//! quantized schedule whose per-provider airtime tracks the fractions to
//! within one quantum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::NodeId;
use crate::policy::{allocate_fractions, Allocation, PolicyError, FRACTION_ONE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParallelMode {
    MultiRadio,
    SingleRadioTdm,
}

/// One leg of a parallel plan: a provider, its traffic fraction in
/// 1/[`FRACTION_ONE`] units, and the radio it is pinned to (multi-radio
/// mode only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leg {
    pub sp: NodeId,
    pub fraction: u32,
    pub radio: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPlan {
    pub client: NodeId,
    pub legs: Vec<Leg>,
    pub mode: ParallelMode,
    pub best_effort: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParallelError {
    #[error("no candidate providers")]
    NoProvider,
    #[error("quantum must be positive")]
    RangeError,
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Build a plan from candidates ranked by descending utility, each with its
/// effective bandwidth.
pub fn plan_parallel(
    client: NodeId,
    candidates: &[(NodeId, u64)],
    needs_bps: u64,
    radios: u32,
) -> Result<ParallelPlan, ParallelError> {
    if candidates.is_empty() {
        return Err(ParallelError::NoProvider);
    }
    let Allocation { fractions, best_effort } = allocate_fractions(needs_bps, candidates)?;
    let multi = fractions.len() as u32 <= radios;
    let legs = fractions
        .iter()
        .enumerate()
        .map(|(i, (sp, f))| Leg {
            sp: *sp,
            fraction: *f,
            radio: if multi { Some(i as u32) } else { None },
        })
        .collect();
    Ok(ParallelPlan {
        client,
        legs,
        mode: if multi { ParallelMode::MultiRadio } else { ParallelMode::SingleRadioTdm },
        best_effort,
    })
}

/// Recompute fractions over the surviving candidates after a leg loss or a
/// capacity change. Losing every leg is reported as `NoProvider`.
pub fn reallocate(
    plan: &ParallelPlan,
    survivors: &[(NodeId, u64)],
    needs_bps: u64,
    radios: u32,
) -> Result<ParallelPlan, ParallelError> {
    plan_parallel(plan.client, survivors, needs_bps, radios)
}

/// A contiguous interval of the TDM timeline given to one provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TdmSlot {
    pub start_us: u64,
    pub end_us: u64,
    pub sp: NodeId,
}

/// Weighted quantized schedule: at each quantum the leg furthest behind its
/// quota is served, so served time never lags the fraction by more than one
/// quantum.
pub fn schedule_tdm(
    plan: &ParallelPlan,
    quantum_us: u64,
    horizon_us: u64,
) -> Result<Vec<TdmSlot>, ParallelError> {
    if quantum_us == 0 {
        return Err(ParallelError::RangeError);
    }
    if plan.legs.is_empty() {
        return Err(ParallelError::NoProvider);
    }
    let mut served = vec![0u64; plan.legs.len()];
    let mut slots: Vec<TdmSlot> = Vec::new();
    let mut t = 0u64;
    let mut slot_no = 0u64;
    while t < horizon_us {
        // Deficit in 1/FRACTION_ONE quanta: quota through this slot minus served.
        let mut best = 0usize;
        let mut best_deficit = i128::MIN;
        for (i, leg) in plan.legs.iter().enumerate() {
            let quota = leg.fraction as i128 * (slot_no + 1) as i128;
            let deficit = quota - served[i] as i128 * FRACTION_ONE as i128;
            if deficit > best_deficit {
                best_deficit = deficit;
                best = i;
            }
        }
        served[best] += 1;
        let end = (t + quantum_us).min(horizon_us);
        match slots.last_mut() {
            Some(last) if last.sp == plan.legs[best].sp && last.end_us == t => last.end_us = end,
            _ => slots.push(TdmSlot { start_us: t, end_us: end, sp: plan.legs[best].sp }),
        }
        t = end;
        slot_no += 1;
    }
    Ok(slots)
}

/// Airtime per provider from a slot list, in microseconds.
pub fn airtime(slots: &[TdmSlot]) -> std::collections::BTreeMap<NodeId, u64> {
    let mut out = std::collections::BTreeMap::new();
    for s in slots {
        *out.entry(s.sp).or_insert(0) += s.end_us - s.start_us;
    }
    out
}

/// Deterministic weighted round-robin picker for spreading packets (or
/// shards) across legs in proportion to their fractions.
#[derive(Debug, Clone)]
pub struct WeightedPicker {
    legs: Vec<(NodeId, u32)>,
    credit: Vec<i64>,
}

impl WeightedPicker {
    pub fn new(legs: Vec<(NodeId, u32)>) -> WeightedPicker {
        let n = legs.len();
        WeightedPicker { legs, credit: vec![0; n] }
    }

    pub fn is_empty(&self) -> bool {
        self.legs.is_empty()
    }

    pub fn pick(&mut self) -> Option<NodeId> {
        if self.legs.is_empty() {
            return None;
        }
        let total: i64 = self.legs.iter().map(|(_, w)| *w as i64).sum();
        let mut best = 0usize;
        for (i, (_, w)) in self.legs.iter().enumerate() {
            self.credit[i] += *w as i64;
            if self.credit[i] > self.credit[best] {
                best = i;
            }
        }
        self.credit[best] -= total;
        Some(self.legs[best].0)
    }
}
