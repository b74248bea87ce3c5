//! Spectral simulator and statistical laboratory for a stochastic wave
//! equation driven by Gaussian noise that is white in time and correlated in
//! space by a Riesz-type kernel.
//!
//! The crate simulates the small-noise field `u_eps`, its deterministic limit
//! `u0`, the first-order fluctuation field `Y`, the skeleton fields `V^h` and
//! `Z^h` driven by deterministic controls, and the rescaled deviation field
//! `Z^eps`. On top of the solvers sit Monte Carlo estimators for moment
//! scaling exponents, Holder regularity, and tail probabilities, plus a
//! least-norm inversion of the linear control-to-solution map that evaluates
//! the deviation rate function.

pub mod analysis;
pub mod cli;
pub mod lattice;
pub mod noise;
pub mod propagator;
pub mod ratefn;
pub mod solver;
pub mod stats;
