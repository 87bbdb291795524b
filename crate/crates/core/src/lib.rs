//! Dynamic ensemble modeling of building thermodynamics.
//!
//! The crate bundles everything the experiment pipeline needs: a reverse-mode
//! differentiable core, a 2R2C thermal simulator that generates heterogeneous
//! per-room data streams, affine base-model fitting and a model library, a
//! TCN/cross-attention state encoder, hierarchical selection/weighting agents
//! trained with REINFORCE, reference ensemble baselines, a streaming inference
//! engine, and a receding-horizon controller that closes the loop against the
//! simulator.

pub mod agents;
pub mod baselines;
pub mod diff;
pub mod encoder;
pub mod engine;
pub mod error;
pub mod frames;
pub mod metrics;
pub mod models;
pub mod mpc;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};

/// Deterministic seed derivation for independent sub-streams.
///
/// SplitMix64 over the global seed and a role tag; stable across platforms
/// and releases, unlike the std hasher.
pub fn derive_seed(global: u64, tag: &str, index: u64) -> u64 {
    let mut h = global ^ 0x9e37_79b9_7f4a_7c15;
    for &b in tag.as_bytes() {
        h = splitmix64(h ^ b as u64);
    }
    splitmix64(h ^ index)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
