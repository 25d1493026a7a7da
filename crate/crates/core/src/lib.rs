//! Parameter-robust sampling-based model predictive control.
//!
//! The library couples three ingredients into one receding-horizon
//! controller:
//!
//! - [`belief`] — an online posterior over unknown physical parameters,
//!   maintained by Stein variational particle transport (with unscented
//!   Kalman and sequential-importance-resampling baselines);
//! - [`safety`] — conformal-prediction certificates for joint chance
//!   constraints over rolled-out trajectories;
//! - [`mppi`] / [`controller`] — a path-integral optimizer that advances a
//!   cost-driven nominal sequence and a robustness-maximizing backup sequence
//!   in parallel, falling back to the backup whenever the nominal sequence
//!   cannot be certified.
//!
//! [`dynamics`] provides the parametric simulation models (cart-pole, planar
//! quadrotor, quadrotor with cable-suspended payload), [`simlab`] the
//! benchmark environments and metrics, and [`cli`] the command-line
//! front end (`run`, `validate`, `table`).

pub mod belief;
pub mod cli;
pub mod config;
pub mod controller;
pub mod dynamics;
pub mod io;
pub mod mppi;
pub mod safety;
pub mod simlab;

/// Deterministic per-purpose RNG stream derived from a trial seed. Tags keep
/// independent consumers (perturbations, belief sampling, randomization)
/// decoupled so adding draws to one never shifts another.
pub fn stream_rng(seed: u64, tag: u64) -> rand_chacha::ChaCha12Rng {
    use rand::SeedableRng;
    // SplitMix64-style mixing of the tag into the seed.
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    rand_chacha::ChaCha12Rng::seed_from_u64(z)
}
