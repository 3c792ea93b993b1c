//! Deterministic discrete-event simulation of adhoc internet tethering.
//!
//! Mobile clients without wide-area connectivity reach the internet through
//! peer "service provider" nodes that share their WWAN backhaul, coordinated
//! by a trusted server that registers principals, anchors an encrypted
//! client data tunnel, and orchestrates soft handoff between providers.
//!
//! The crate is organized around the protocol layers:
//!
//! - [`model`] — identifiers, addresses, packets, flows, canonical encodings
//! - [`crypto`] — symbolic sealed envelopes, key registry, certificates
//! - [`handshake`] — control-session establishment state machines
//! - [`tunnel`] — client↔server data tunnel, provider NAT, server NAT
//! - [`node`] — client / service-provider / server behavioral state
//! - [`handoff`] — soft-handoff plans, pre-authentication, residual drain
//! - [`policy`] — goodness metric, utility functions, fractions, revenue
//! - [`parallel`] — multi-provider session plans, TDM scheduling
//! - [`erasure`] — GF(256) systematic Reed-Solomon outer coding
//! - [`sim`] — the event engine, links, scenarios, traces, reports
//!
//! Start with the runnable examples (`cargo run --example basic_access`) or
//! the CLI (`cargo run -- run --scenario scenarios/basic_access.toml ...`).

pub mod crypto;
pub mod erasure;
pub mod handoff;
pub mod handshake;
pub mod model;
pub mod node;
pub mod parallel;
pub mod policy;
pub mod sim;
pub mod tunnel;

pub mod cli;
