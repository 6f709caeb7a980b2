//! Desk-scale laboratory for hybrid CSMA/CA-TDMA medium access in single-hop
//! star networks.
//!
//! The crate combines three layers that cross-validate each other:
//!
//! * [`csma`] — a saturation-mode analytical model of slotted CSMA/CA
//!   (fixed-point backoff chain, throughput, loss probabilities) plus
//!   channel-fading and hidden-node corrections.
//! * [`mdca`] / [`mcca`] — MDP-based channel-access policies: a distributed
//!   per-node policy solved by value iteration, and a centralized coordinator
//!   scheduler with an approximate joint-action search.
//! * [`sim`] — a deterministic, seedable discrete-event simulator at unit
//!   backoff period (UBP) granularity that runs the schemes side by side and
//!   validates the analytics.
//!
//! [`experiment`] drives parameter sweeps and writes plot-ready CSV.

pub mod csma;
pub mod dp;
pub mod error;
pub mod experiment;
pub mod mcca;
pub mod mdca;
pub mod sim;
pub mod traffic;
pub mod types;

pub use error::{Error, Result};
pub use types::{Action, MacParams, NodeState, SuperframeConfig, SuperframeLayout};
