//! Preference inference from demonstrations for a two-objective home
//! energy-management problem.
//!
//! The pipeline: train a weight-conditioned Q-network on one day of data
//! ([`agent`]), sweep the preference simplex to collect
//! `(cumulative reward, weights)` pairs, fit a small regression network that
//! maps a demonstration's cumulative reward back to weights ([`dwpi`]), and
//! evaluate it on rule-based users ([`scenarios`], [`experiments`]).

pub mod agent;
pub mod datahub;
pub mod dwpi;
pub mod env;
pub mod experiments;
pub mod nn;
pub mod scenarios;

pub use datahub::{DataWindow, HourlySeries, SeriesPoint};
pub use env::{Action, EnvConfig, EnvState, PreferenceWeights, RewardVector};
pub use nn::{Mlp, OutputActivation};
pub use scenarios::{Scenario, Schedule};

/// Derives an independent sub-seed from a master seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
