//! Sample-size and power toolkit for A/B tests.
//!
//! Covers the designs that standard calculators get wrong or don't offer:
//!
//! - **Correlated data** ([`clustered`]): when users are randomized but
//!   sessions are analyzed, the session-level metric is a ratio of per-user
//!   sums. Its variance kernel `h` replaces σ² in the sizing formula and
//!   yields the required number of *randomization units*.
//! - **Relative lifts** ([`sizing`]): powering for a percentage change must
//!   treat the baseline as random; the required size differs from the
//!   absolute-lift formula by (1 + (1+δ_rel)²)/2.
//! - **Minimum observed difference** ([`sizing::mod_from_ate`]): the smallest
//!   lift that will come out significant, known at design time.
//! - **Unbalanced allocation** ([`sizing::allocate_unbalanced`]): trading
//!   total sample size for experiment duration when control traffic is cheap.
//! - **Monte Carlo verification** ([`simulation`]): a deterministic engine
//!   that reproduces the power and type I error of every design above.
//!
//! [`ingest`] reads session logs and aggregates them to the user level;
//! [`stats`] holds the numerical primitives (normal CDF/quantile, moments,
//! deterministic RNG streams, samplers).

pub mod clustered;
pub mod error;
pub mod ingest;
pub mod simulation;
pub mod sizing;
pub mod stats;

pub use error::{Error, Result};
pub use stats::{Probability, RngStream};
