//! Outage-constrained power allocation for multiuser MISO systems.
//!
//! The library turns probabilistic SINR/MSE constraints into deterministic
//! convex constraint oracles (via the exponential moment bound of the channel
//! error statistics), solves the resulting programs with a long-step
//! logarithmic-barrier cutting-plane solver, and certifies solutions
//! empirically by Monte Carlo simulation of the channel-error law.
//!
//! Module layout:
//! - [`model`]: scenario data types, random instance generation, exact
//!   per-realization SINR and MSE.
//! - [`bernstein`]: the convex constraint oracles, their gradients, and the
//!   inner line search over the scale parameter.
//! - [`llbcp`]: the cutting-plane solver (localization polytope, damped
//!   Newton centering, row dropping, subgradient cuts).
//! - [`problems`]: the four optimization drivers (power minimization,
//!   max-min SINR under individual/total budgets, MSE power minimization).
//! - [`montecarlo`]: empirical outage certification and MSE histograms.

pub mod bernstein;
pub mod llbcp;
pub mod model;
pub mod montecarlo;
pub mod problems;
