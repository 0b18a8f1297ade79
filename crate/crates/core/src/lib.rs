//! Numerical laboratory for the continuous-time Kyle-Back insider-trading game.
//!
//! The market maker prices a risky asset from the aggregate order flow; an
//! insider who knows the terminal value trades against that rule. Working in
//! the weak formulation (all expectations under one reference measure where
//! the order flow is Brownian, strategies entering through Girsanov weights),
//! equilibria are in one-to-one correspondence with solutions of a coupled
//! FBSDE whose forward component is the conditional law of the inside
//! information on the probability simplex and whose backward component is the
//! insider's optimal value.
//!
//! The crate provides:
//!
//! - [`model`]: market description and config ingestion;
//! - [`hamiltonian`]: the insider Hamiltonian `H(z) = sup_θ [zθ - f(θ)]` and
//!   its derivative (the optimal trading rate);
//! - [`simulate`]: Brownian bundles with counter-based substreams, Girsanov
//!   weights, and the conditional-law filter (exact ratio form and Euler SDE
//!   form);
//! - [`bsde`]: the insider's value for a fixed pricing rule (grid and
//!   regression backward solvers) and plain strategy valuation;
//! - [`fbsde`]: Picard iteration on the truncated coupled system, producing
//!   equilibrium surfaces, feedback strategies, and diagnostics;
//! - [`verify`]: epsilon-equilibrium certification, set-value membership
//!   probes, and a Markov-property diagnostic for price processes;
//! - [`bridge`]: the classical Gaussian bridge equilibrium, its truncation,
//!   and Monte Carlo verification of the truncation rate;
//! - [`levelset`]: the auxiliary control problem whose zero level set equals
//!   the game's set value, with cost evaluation and upper-bound search;
//! - [`oracles`]: independent brute-force/closed-form reference values used
//!   by the test suite.
//!
//! All numerical kernels are generic over the scalar type through [`Real`];
//! concrete `f64` aliases for the main types are exported at the crate root.

pub mod basis;
pub mod bridge;
pub mod bsde;
pub mod error;
pub mod fbsde;
pub mod feedback;
pub mod hamiltonian;
pub mod levelset;
pub mod model;
pub mod oracles;
pub mod quad;
pub mod rng;
pub mod scalar;
pub mod simplex;
pub mod simulate;
pub mod stats;
pub mod verify;

pub use error::Error;
pub use scalar::Real;

/// Crate-level result alias.
pub type Result<T> = std::result::Result<T, Error>;

// Concrete f64 aliases for the main domain types.
pub type MarketModel64 = model::MarketModel<f64>;
pub type Discretization64 = model::Discretization<f64>;
pub type HamiltonianSpec64 = hamiltonian::HamiltonianSpec<f64>;
pub type PathBundle64 = simulate::PathBundle<f64>;
pub type FilterPath64 = simulate::FilterPath<f64>;
pub type Strategy64 = feedback::Strategy<f64>;
pub type FeedbackStrategy64 = feedback::FeedbackStrategy<f64>;
pub type PriceMap64 = feedback::PriceMap<f64>;
pub type ValueSurface64 = bsde::ValueSurface<f64>;
pub type EquilibriumSolution64 = fbsde::EquilibriumSolution<f64>;
pub type EpsilonCertificate64 = verify::EpsilonCertificate<f64>;
pub type LevelSetReport64 = levelset::LevelSetReport<f64>;
