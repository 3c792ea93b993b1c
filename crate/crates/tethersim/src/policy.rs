//! Goodness metric maintenance, provider and client utility functions,
//! fractional traffic allocation, and revenue distribution.
//!
//! Money is integer milli-units throughout; wherever fractions meet integers
//! the split uses largest-remainder apportionment so totals are conserved
//! exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{NodeId, QosPromise, SimTime};

/// Fraction denominator used for traffic allocation: 1/1024 granularity.
pub const FRACTION_ONE: u32 = 1024;

const ENERGY_EPSILON_J: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("value {0} outside [0,1]")]
    RangeError(f64),
    #[error("promised bandwidth is zero")]
    ZeroPromise,
    #[error("demanded bandwidth is zero")]
    ZeroDemand,
    #[error("no offers to allocate across")]
    EmptyOffers,
    #[error("offer from {0} has zero bandwidth")]
    ZeroOffer(NodeId),
    #[error("revenue shares sum to {0}, expected 1")]
    BadShares(f64),
}

/// Goodness values are fixed-point millionths so the update arithmetic is
/// exact and trace output is platform-independent.
pub const GOODNESS_ONE: u64 = 1_000_000;

/// Quantize a unit-interval f64 into millionths.
pub fn to_ppm(x: f64) -> Result<u32, PolicyError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(PolicyError::RangeError(x));
    }
    Ok((x * GOODNESS_ONE as f64).round() as u32)
}

/// Exponentially weighted service-quality score for one provider:
/// `value = alpha * g_session + (1 - alpha) * value_prev`, kept in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoodnessMetric {
    pub value_ppm: u32,
    pub alpha_ppm: u32,
    pub sessions_seen: u64,
}

impl GoodnessMetric {
    /// Uninformative prior for a never-seen provider.
    pub const INITIAL_PPM: u32 = 500_000;

    pub fn new(alpha: f64) -> GoodnessMetric {
        GoodnessMetric {
            value_ppm: Self::INITIAL_PPM,
            alpha_ppm: to_ppm(alpha).unwrap_or(500_000),
            sessions_seen: 0,
        }
    }

    pub fn with_value(alpha: f64, value: f64) -> GoodnessMetric {
        GoodnessMetric {
            value_ppm: to_ppm(value).unwrap_or(0),
            alpha_ppm: to_ppm(alpha).unwrap_or(500_000),
            sessions_seen: 0,
        }
    }

    pub fn value(&self) -> f64 {
        self.value_ppm as f64 / GOODNESS_ONE as f64
    }

    pub fn alpha(&self) -> f64 {
        self.alpha_ppm as f64 / GOODNESS_ONE as f64
    }

    /// Fold one session score into the metric. Round-half-up fixed-point
    /// keeps the result inside [prev, session].
    pub fn update(&self, g_session: f64) -> Result<GoodnessMetric, PolicyError> {
        let g_ppm = to_ppm(g_session)? as u64;
        let a = self.alpha_ppm as u64;
        let num = a * g_ppm + (GOODNESS_ONE - a) * self.value_ppm as u64;
        let value_ppm = ((num + GOODNESS_ONE / 2) / GOODNESS_ONE) as u32;
        Ok(GoodnessMetric {
            value_ppm,
            alpha_ppm: self.alpha_ppm,
            sessions_seen: self.sessions_seen + 1,
        })
    }
}

/// What a closed service session looked like, as recorded by the server.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRecord {
    pub sp: NodeId,
    pub client: NodeId,
    pub promise: QosPromise,
    pub opened_at: SimTime,
    pub closed_at: SimTime,
    pub bytes_carried: u64,
    pub reason: CloseReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseReason {
    Completed,
    Handoff,
    Withdrawn,
    Vanished,
    SimEnd,
}

impl SessionRecord {
    pub fn elapsed_s(&self) -> f64 {
        self.closed_at.saturating_sub(self.opened_at) as f64 / 1_000_000.0
    }

    /// Fraction of the promised duration actually served, capped at 1.
    pub fn completion_ratio(&self) -> f64 {
        (self.elapsed_s() / self.promise.duration_s as f64).min(1.0)
    }

    pub fn delivered_bandwidth_bps(&self) -> f64 {
        let s = self.elapsed_s();
        if s <= 0.0 {
            0.0
        } else {
            self.bytes_carried as f64 / s
        }
    }
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Session score: bandwidth-keeping ratio times duration-keeping ratio.
/// Over-delivery does not earn extra credit, so the score is capped by the
/// completion ratio.
pub fn score_session(r: &SessionRecord) -> Result<f64, PolicyError> {
    if r.promise.avg_bandwidth_bps == 0 {
        return Err(PolicyError::ZeroPromise);
    }
    let bw_ratio = r.delivered_bandwidth_bps() / r.promise.avg_bandwidth_bps as f64;
    Ok(clamp01(bw_ratio.min(1.0) * r.completion_ratio()))
}

/// Provider-side utility weights plus the serve threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpWeights {
    pub w_revenue: f64,
    pub w_energy: f64,
    pub w_local_load: f64,
    pub w_goodness: f64,
    pub threshold: f64,
}

impl Default for SpWeights {
    fn default() -> Self {
        SpWeights { w_revenue: 1.0, w_energy: 1.0, w_local_load: 1.0, w_goodness: 1.0, threshold: 0.0 }
    }
}

/// Client-side selection weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientWeights {
    pub w_cost: f64,
    pub w_duration: f64,
    pub w_goodness: f64,
    pub w_bandwidth: f64,
}

impl Default for ClientWeights {
    fn default() -> Self {
        ClientWeights { w_cost: 1.0, w_duration: 1.0, w_goodness: 1.0, w_bandwidth: 1.0 }
    }
}

/// Scalar inputs to the provider utility, decoupled from node state.
#[derive(Debug, Clone, Copy)]
pub struct SpUtilityInputs {
    pub energy_j: f64,
    pub energy_rate_per_client_j: f64,
    pub local_load_bps: u64,
    pub backhaul_bps: u64,
    pub goodness: f64,
}

/// Provider utility for serving `req`: revenue pull minus energy and local
/// load pressure, plus the desire to improve a weak goodness score.
pub fn sp_utility(inputs: &SpUtilityInputs, req: &QosPromise, w: &SpWeights) -> f64 {
    let revenue_units = req.cost_milli_per_s as f64 / 1000.0 * req.duration_s as f64;
    let energy_needed = inputs.energy_rate_per_client_j * req.duration_s as f64;
    let energy_term = energy_needed / inputs.energy_j.max(ENERGY_EPSILON_J);
    let load_term = if inputs.backhaul_bps == 0 {
        1.0
    } else {
        inputs.local_load_bps as f64 / inputs.backhaul_bps as f64
    };
    w.w_revenue * revenue_units - w.w_energy * energy_term - w.w_local_load * load_term
        + w.w_goodness * (1.0 - inputs.goodness)
}

/// What a provider currently advertises, as scored by a client.
#[derive(Debug, Clone, Copy)]
pub struct ServiceOffer {
    pub cost_milli_per_s: u64,
    pub remaining_duration_s: u64,
    pub goodness: f64,
    pub avail_bandwidth_bps: u64,
}

/// Client utility for one candidate offer over one adhoc link.
pub fn client_utility(
    needs: &QosPromise,
    offer: &ServiceOffer,
    link_quality: f64,
    link_capacity_bps: u64,
    w: &ClientWeights,
) -> Result<f64, PolicyError> {
    if needs.avg_bandwidth_bps == 0 {
        return Err(PolicyError::ZeroDemand);
    }
    let cost_units = offer.cost_milli_per_s as f64 / 1000.0;
    let duration_term =
        offer.remaining_duration_s.min(needs.duration_s) as f64 / needs.duration_s as f64;
    let usable_bps = (offer.avail_bandwidth_bps as f64).min(link_quality * link_capacity_bps as f64);
    let bandwidth_term = usable_bps / needs.avg_bandwidth_bps as f64;
    Ok(-w.w_cost * cost_units
        + w.w_duration * duration_term
        + w.w_goodness * offer.goodness
        + w.w_bandwidth * bandwidth_term)
}

/// Outcome of fractional allocation across ranked offers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    /// `(provider, numerator)` pairs in offer order; numerators are in
    /// 1/[`FRACTION_ONE`] units and sum to exactly [`FRACTION_ONE`].
    pub fractions: Vec<(NodeId, u32)>,
    /// Set when the offers together cannot cover the demand and every offer
    /// is used as-is.
    pub best_effort: bool,
}

impl Allocation {
    pub fn fraction_of(&self, sp: NodeId) -> u32 {
        self.fractions.iter().find(|(n, _)| *n == sp).map(|(_, f)| *f).unwrap_or(0)
    }
}

/// Split demand across offers ranked by descending utility: take the
/// minimal prefix whose bandwidth covers the demand, then allocate each
/// member proportionally to its bandwidth with largest-remainder rounding.
pub fn allocate_fractions(
    needs_bps: u64,
    offers: &[(NodeId, u64)],
) -> Result<Allocation, PolicyError> {
    if offers.is_empty() {
        return Err(PolicyError::EmptyOffers);
    }
    for (sp, b) in offers {
        if *b == 0 {
            return Err(PolicyError::ZeroOffer(*sp));
        }
    }
    let mut prefix_len = offers.len();
    let mut acc = 0u64;
    let mut best_effort = true;
    for (i, (_, b)) in offers.iter().enumerate() {
        acc += b;
        if acc >= needs_bps {
            prefix_len = i + 1;
            best_effort = false;
            break;
        }
    }
    let prefix = &offers[..prefix_len];
    let total: u64 = prefix.iter().map(|(_, b)| b).sum();

    // Largest-remainder apportionment of FRACTION_ONE units.
    let mut floors: Vec<u32> = Vec::with_capacity(prefix.len());
    let mut remainders: Vec<(u64, usize)> = Vec::with_capacity(prefix.len());
    let mut assigned = 0u32;
    for (i, (_, b)) in prefix.iter().enumerate() {
        let scaled = (*b as u128) * FRACTION_ONE as u128;
        let floor = (scaled / total as u128) as u32;
        let rem = (scaled % total as u128) as u64;
        floors.push(floor);
        remainders.push((rem, i));
        assigned += floor;
    }
    let mut leftover = FRACTION_ONE - assigned;
    // Largest remainder first; ties go to the earlier (higher-utility) offer.
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, idx) in remainders {
        if leftover == 0 {
            break;
        }
        floors[idx] += 1;
        leftover -= 1;
    }
    let fractions = prefix.iter().zip(floors).map(|((sp, _), f)| (*sp, f)).collect();
    Ok(Allocation { fractions, best_effort })
}

/// How session revenue is divided across the value chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevenuePolicy {
    pub sp: f64,
    pub server: f64,
    pub carrier: f64,
}

impl Default for RevenuePolicy {
    fn default() -> Self {
        RevenuePolicy { sp: 0.5, server: 0.3, carrier: 0.2 }
    }
}

impl RevenuePolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let sum = self.sp + self.server + self.carrier;
        if (sum - 1.0).abs() > 1e-9 || self.sp < 0.0 || self.server < 0.0 || self.carrier < 0.0 {
            return Err(PolicyError::BadShares(sum));
        }
        Ok(())
    }
}

/// Exact integer split of one session's revenue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevenueShares {
    pub total_milli: u64,
    pub sp_milli: u64,
    pub server_milli: u64,
    pub carrier_milli: u64,
}

/// Session revenue is price times fulfilled duration (whole micros floored
/// to milli-units), split exactly per policy shares.
pub fn allocate_revenue(r: &SessionRecord, p: &RevenuePolicy) -> Result<RevenueShares, PolicyError> {
    p.validate()?;
    let elapsed_us = r.closed_at.saturating_sub(r.opened_at);
    let fulfilled_us = elapsed_us.min(r.promise.duration_s * 1_000_000);
    let total_milli =
        ((r.promise.cost_milli_per_s as u128 * fulfilled_us as u128) / 1_000_000) as u64;

    let shares = [p.sp, p.server, p.carrier];
    let mut parts = [0u64; 3];
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(3);
    let mut assigned = 0u64;
    for (i, s) in shares.iter().enumerate() {
        let exact = s * total_milli as f64;
        let floor = exact.floor() as u64;
        parts[i] = floor;
        assigned += floor;
        remainders.push((exact - floor as f64, i));
    }
    let mut leftover = total_milli - assigned;
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for (_, idx) in remainders {
        if leftover == 0 {
            break;
        }
        parts[idx] += 1;
        leftover -= 1;
    }
    Ok(RevenueShares {
        total_milli,
        sp_milli: parts[0],
        server_milli: parts[1],
        carrier_milli: parts[2],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn promise(bw: u64, dur: u64, cost: u64) -> QosPromise {
        QosPromise { avg_bandwidth_bps: bw, duration_s: dur, cost_milli_per_s: cost }
    }

    fn record(bw_promised: u64, dur_promised: u64, elapsed_s: u64, bytes: u64) -> SessionRecord {
        SessionRecord {
            sp: NodeId::sp(0),
            client: NodeId::client(0),
            promise: promise(bw_promised, dur_promised, 2),
            opened_at: SimTime::from_secs(1),
            closed_at: SimTime::from_secs(1 + elapsed_s),
            bytes_carried: bytes,
            reason: CloseReason::Completed,
        }
    }

    #[test]
    fn goodness_update_exact() {
        let g = GoodnessMetric::with_value(0.5, 0.8);
        let g2 = g.update(0.4).unwrap();
        assert_eq!(g2.value(), 0.6);
        assert_eq!(g2.value_ppm, 600_000);
        assert_eq!(g2.sessions_seen, 1);
    }

    #[test]
    fn goodness_alpha_boundaries() {
        let g = GoodnessMetric::with_value(1.0, 0.8);
        assert_eq!(g.update(0.3).unwrap().value(), 0.3);
        let g = GoodnessMetric::with_value(0.0, 0.8);
        assert_eq!(g.update(0.3).unwrap().value(), 0.8);
    }

    #[test]
    fn goodness_out_of_range_rejected() {
        let g = GoodnessMetric::new(0.5);
        assert!(g.update(1.5).is_err());
        assert!(g.update(-0.1).is_err());
    }

    #[test]
    fn goodness_converges_geometrically() {
        // From 0.5 toward 1.0 at alpha 0.5: error halves each session.
        let mut g = GoodnessMetric::with_value(0.5, 0.5);
        for _ in 0..20 {
            g = g.update(1.0).unwrap();
        }
        let closed_form = 1.0 - 0.5f64 * 0.5f64.powi(20);
        assert!((g.value() - closed_form).abs() < 1e-4);
        assert!((g.value() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn score_session_cases() {
        // Delivered exactly as promised for the full duration.
        let r = record(1000, 10, 10, 10_000);
        assert_eq!(score_session(&r).unwrap(), 1.0);
        // Half bandwidth for half the promised duration: 0.5 * 0.5.
        let r = record(1000, 10, 5, 2_500);
        assert_eq!(score_session(&r).unwrap(), 0.25);
        // Over-delivery is capped by the completion ratio.
        let r = record(1000, 10, 5, 50_000);
        assert_eq!(score_session(&r).unwrap(), 0.5);
    }

    #[test]
    fn score_session_zero_promise_rejected() {
        let mut r = record(1000, 10, 10, 10_000);
        r.promise.avg_bandwidth_bps = 0;
        assert_eq!(score_session(&r), Err(PolicyError::ZeroPromise));
    }

    #[test]
    fn sp_utility_zero_weights_is_zero() {
        let w = SpWeights { w_revenue: 0.0, w_energy: 0.0, w_local_load: 0.0, w_goodness: 0.0, threshold: 0.0 };
        let i = SpUtilityInputs {
            energy_j: 100.0,
            energy_rate_per_client_j: 0.5,
            local_load_bps: 1000,
            backhaul_bps: 10_000,
            goodness: 0.5,
        };
        let u = sp_utility(&i, &promise(1000, 60, 2), &w);
        assert_eq!(u, 0.0);
        // At-threshold is a deny: serve requires U strictly above threshold.
        assert!(!(u > w.threshold));
    }

    #[test]
    fn sp_utility_energy_depletion_dominates() {
        let w = SpWeights::default();
        let mut i = SpUtilityInputs {
            energy_j: 1e-9,
            energy_rate_per_client_j: 0.5,
            local_load_bps: 0,
            backhaul_bps: 10_000,
            goodness: 0.5,
        };
        i.energy_j = 0.0;
        let u = sp_utility(&i, &promise(1000, 60, 2), &w);
        assert!(u < -1000.0);
    }

    #[test]
    fn client_utility_prefers_goodness_and_low_cost() {
        let w = ClientWeights::default();
        let needs = promise(10_000, 60, 5);
        let base = ServiceOffer {
            cost_milli_per_s: 2,
            remaining_duration_s: 120,
            goodness: 0.4,
            avail_bandwidth_bps: 20_000,
        };
        let better_goodness = ServiceOffer { goodness: 0.9, ..base };
        let u_base = client_utility(&needs, &base, 1.0, 1_000_000, &w).unwrap();
        let u_good = client_utility(&needs, &better_goodness, 1.0, 1_000_000, &w).unwrap();
        assert!(u_good > u_base);

        let free = ServiceOffer { cost_milli_per_s: 0, ..base };
        let u_free = client_utility(&needs, &free, 1.0, 1_000_000, &w).unwrap();
        assert!(u_free > u_base);
    }

    #[test]
    fn client_utility_zero_demand_rejected() {
        let w = ClientWeights::default();
        let needs = promise(0, 60, 5);
        let offer = ServiceOffer {
            cost_milli_per_s: 2,
            remaining_duration_s: 60,
            goodness: 0.5,
            avail_bandwidth_bps: 1000,
        };
        assert_eq!(
            client_utility(&needs, &offer, 1.0, 1000, &w),
            Err(PolicyError::ZeroDemand)
        );
    }

    #[test]
    fn allocate_single_sufficient_offer() {
        let a = allocate_fractions(1000, &[(NodeId::sp(0), 2000), (NodeId::sp(1), 2000)]).unwrap();
        assert_eq!(a.fractions, vec![(NodeId::sp(0), FRACTION_ONE)]);
        assert!(!a.best_effort);
    }

    #[test]
    fn allocate_two_equal_offers() {
        let a = allocate_fractions(2000, &[(NodeId::sp(0), 1000), (NodeId::sp(1), 1000)]).unwrap();
        assert_eq!(a.fractions, vec![(NodeId::sp(0), 512), (NodeId::sp(1), 512)]);
    }

    #[test]
    fn allocate_three_to_one() {
        let a = allocate_fractions(900_000, &[(NodeId::sp(0), 750_000), (NodeId::sp(1), 250_000)])
            .unwrap();
        assert_eq!(a.fractions, vec![(NodeId::sp(0), 768), (NodeId::sp(1), 256)]);
        assert!(!a.best_effort);
    }

    #[test]
    fn allocate_best_effort_flags() {
        let a = allocate_fractions(10_000, &[(NodeId::sp(0), 100), (NodeId::sp(1), 200)]).unwrap();
        assert!(a.best_effort);
        assert_eq!(a.fractions.len(), 2);
        let sum: u32 = a.fractions.iter().map(|(_, f)| f).sum();
        assert_eq!(sum, FRACTION_ONE);
    }

    #[test]
    fn revenue_exact_split() {
        let mut r = record(1000, 10, 10, 10_000);
        r.promise.cost_milli_per_s = 1000; // 1 unit/sec for 10 s => 10_000 milli
        let p = RevenuePolicy { sp: 0.5, server: 0.3, carrier: 0.2 };
        let s = allocate_revenue(&r, &p).unwrap();
        assert_eq!(s.total_milli, 10_000);
        assert_eq!((s.sp_milli, s.server_milli, s.carrier_milli), (5_000, 3_000, 2_000));
    }

    #[test]
    fn revenue_zero_duration_all_zero() {
        let r = record(1000, 10, 0, 0);
        let s = allocate_revenue(&r, &RevenuePolicy::default()).unwrap();
        assert_eq!(s, RevenueShares { total_milli: 0, sp_milli: 0, server_milli: 0, carrier_milli: 0 });
    }

    #[test]
    fn revenue_bad_policy_rejected() {
        let r = record(1000, 10, 10, 0);
        let p = RevenuePolicy { sp: 0.5, server: 0.3, carrier: 0.1 };
        assert!(matches!(allocate_revenue(&r, &p), Err(PolicyError::BadShares(_))));
    }

    proptest! {
        #[test]
        fn prop_goodness_is_convex_combination(prev in 0.0f64..=1.0, sess in 0.0f64..=1.0, alpha in 0.0f64..=1.0) {
            let before = GoodnessMetric::with_value(alpha, prev);
            let after = before.update(sess).unwrap();
            let sess_ppm = to_ppm(sess).unwrap();
            let lo = before.value_ppm.min(sess_ppm);
            let hi = before.value_ppm.max(sess_ppm);
            prop_assert!(after.value_ppm >= lo && after.value_ppm <= hi);
        }

        #[test]
        fn prop_score_session_in_unit_interval(
            bw in 1u64..1_000_000,
            dur in 1u64..10_000,
            elapsed in 0u64..20_000,
            bytes in 0u64..u32::MAX as u64,
        ) {
            let r = record(bw, dur, elapsed, bytes);
            let s = score_session(&r).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn prop_sp_utility_monotone_in_revenue(
            cost_lo in 1u64..1000,
            bump in 1u64..1000,
            dur in 1u64..3600,
            energy in 1.0f64..10_000.0,
            rate in 0.0f64..10.0,
            load in 0u64..1_000_000,
        ) {
            let w = SpWeights::default();
            let i = SpUtilityInputs {
                energy_j: energy,
                energy_rate_per_client_j: rate,
                local_load_bps: load,
                backhaul_bps: 1_000_000,
                goodness: 0.5,
            };
            let u_lo = sp_utility(&i, &promise(1000, dur, cost_lo), &w);
            let u_hi = sp_utility(&i, &promise(1000, dur, cost_lo + bump), &w);
            prop_assert!(u_hi >= u_lo);
        }

        #[test]
        fn prop_argmax_invariant_under_weight_scaling(
            scale in 0.001f64..1000.0,
            offers in proptest::collection::vec((1u64..100, 1u64..600, 0u32..=100, 1u64..1_000_000), 1..8),
        ) {
            let needs = promise(50_000, 120, 5);
            let w = ClientWeights::default();
            let ws = ClientWeights {
                w_cost: w.w_cost * scale,
                w_duration: w.w_duration * scale,
                w_goodness: w.w_goodness * scale,
                w_bandwidth: w.w_bandwidth * scale,
            };
            let score = |w: &ClientWeights| -> usize {
                let mut best = (f64::NEG_INFINITY, 0usize);
                for (i, (cost, dur, good, bw)) in offers.iter().enumerate() {
                    let offer = ServiceOffer {
                        cost_milli_per_s: *cost,
                        remaining_duration_s: *dur,
                        goodness: *good as f64 / 100.0,
                        avail_bandwidth_bps: *bw,
                    };
                    let u = client_utility(&needs, &offer, 1.0, 3_000_000, w).unwrap();
                    if u > best.0 + 1e-12 {
                        best = (u, i);
                    }
                }
                best.1
            };
            prop_assert_eq!(score(&w), score(&ws));
        }

        #[test]
        fn prop_fractions_form_probability_vector(
            needs in 1u64..10_000_000,
            offers in proptest::collection::vec(1u64..1_000_000, 1..10),
        ) {
            let offers: Vec<(NodeId, u64)> =
                offers.iter().enumerate().map(|(i, b)| (NodeId::sp(i as u32), *b)).collect();
            let a = allocate_fractions(needs, &offers).unwrap();
            let sum: u32 = a.fractions.iter().map(|(_, f)| f).sum();
            prop_assert_eq!(sum, FRACTION_ONE);
        }

        #[test]
        fn prop_revenue_conserved(
            cost in 1u64..100_000,
            dur_promised in 1u64..10_000,
            elapsed in 0u64..20_000,
            sp_w in 0u32..=1000,
            server_w in 0u32..=1000,
        ) {
            let sp_f = sp_w as f64 / 1000.0;
            let server_f = (1.0 - sp_f) * (server_w as f64 / 1000.0);
            let carrier_f = 1.0 - sp_f - server_f;
            let p = RevenuePolicy { sp: sp_f, server: server_f, carrier: carrier_f };
            let mut r = record(1000, dur_promised, elapsed, 0);
            r.promise.cost_milli_per_s = cost;
            let s = allocate_revenue(&r, &p).unwrap();
            prop_assert_eq!(s.sp_milli + s.server_milli + s.carrier_milli, s.total_milli);
        }
    }
}
