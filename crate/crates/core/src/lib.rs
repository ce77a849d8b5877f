//! Simulation, learning, and attribution engine for cellular-connected UAV
//! handover management.
//!
//! The crate is organized around the lifecycle of a handover policy:
//!
//! - [`channel`] — 3GPP direct air-to-ground propagation and per-step radio
//!   measurements (LOS probability, path loss, shadow fading, RSRP, RSRQ,
//!   uplink SINR).
//! - [`traffic`] — UAV buffer-queue dynamics with Poisson data arrivals,
//!   handover control packets, and Shannon-rate service.
//! - [`env`] — the MDP environment: base-station grid, trajectories, state
//!   assembly, reward, episode loop, baseline policies, and metrics.
//! - [`nn`] — a minimal feedforward network with exact backpropagation, the
//!   shared model substrate for the DQN and the attribution engine.
//! - [`dqn`] — replay-buffer DQN training with a target network, ε-greedy
//!   exploration, and decaying learning rate.
//! - [`explain`] — Shapley-value feature attribution: exact coalition
//!   enumeration, permutation sampling, and DeepLIFT-rescale propagation.
//! - [`report`] — global importance rankings, beeswarm/waterfall datasets,
//!   and deterministic template-based explanations.
//! - [`ingest`] — flight measurement log parsing and replay into the state
//!   layout shared with the simulator.
//!
//! Numeric kernels (`nn`, `explain`, and the closed-form channel/traffic
//! math) are generic over the scalar type through [`Real`]; the simulator
//! and trainer run the `f64` lane, re-exported as concrete aliases below.

pub mod channel;
pub mod dqn;
pub mod env;
pub mod explain;
pub mod ingest;
pub mod nn;
pub mod report;
pub mod traffic;

mod error;
mod real;

pub use error::{Error, Result};
pub use real::Real;

/// Feedforward network over `f64`, the lane used by training and the CLI.
pub type Mlp = nn::Mlp<f64>;
/// Cached forward pass of an [`Mlp`].
pub type ForwardTrace = nn::ForwardTrace<f64>;
/// Parameter gradients of an [`Mlp`].
pub type Gradients = nn::Gradients<f64>;
/// Per-feature Shapley attribution over `f64`.
pub type Attribution = explain::Attribution<f64>;
/// Background (baseline) dataset over `f64`.
pub type BackgroundSet = explain::BackgroundSet<f64>;
