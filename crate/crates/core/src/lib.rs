//! Adversarial disturbance synthesis for safety-guided imitation learning.
//!
//! A sampling MPC solver finds the input sequence that keeps the system
//! farthest from failure under a shrunken input bound; the sign of its first
//! input gives the worst-case bang-bang disturbance, which is injected into
//! expert demonstrations while recording the clean expert labels. Behavior
//! cloning on those demonstrations yields policies that have seen recovery
//! from near-failure states.
//!
//! Two brute-force oracles check the disturbance synthesis: robust value
//! iteration on a Dubins grid, and exhaustive max-min dynamic programming on
//! 1D control-affine instances.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod expert;
pub mod guidance;
pub mod mppi;
pub mod oracle;
pub mod policy;
pub mod scenario;
pub mod seed;
pub mod world;

pub use dynamics::{Control, Disturbance, Dubins, Dynamics, Model, Quad4d, State};
pub use error::{Error, Result};
pub use mppi::{InputSequence, MppiConfig, MppiResult};
pub use world::World;

/// Version string embedded in artifact manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn fingerprint<T: serde::Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
