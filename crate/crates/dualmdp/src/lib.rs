//! Exact duality toolkit for finite average-reward MDPs.
//!
//! Everything here works on small tabular problems with dense linear
//! algebra, so each construction can be cross-checked against independent
//! oracles: the occupancy-measure linear program and its value-function
//! dual, entropy-regularized objectives solved through their duals under
//! two Bregman divergences, mirror-descent / dual-averaging policy
//! iterations, a trust-region natural-gradient step with its analytic step
//! size, and an occupancy-matching saddle-point solver for inverse
//! reinforcement learning.
//!
//! All types are immutable values after construction and all operations are
//! pure functions, so everything can be shared freely across threads.

pub mod error;
pub mod generate;
pub mod irl;
pub mod lp;
pub mod mdp;
pub mod reg;
pub mod rng;
pub mod trace;
pub mod trpo;

pub use error::{Error, Result};
pub use mdp::{
    average_reward, bellman_backup, brute_force_optimal, is_unichain, occupancy_from_policy,
    policy_bias_values, policy_from_occupancy, stationary_distribution, MdpFile,
    OccupancyMeasure, Policy, QFunction, TabularMdp, ValueSolution,
};
pub use trace::{fmt_sig12, SolveTrace, TraceRow};
