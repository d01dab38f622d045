//! Equilibrium stochastic discount factor for a mean-field game of firms
//! choosing emission schedules under climate-transition risk.
//!
//! The equilibrium is found by iterating the market-clearing map on the
//! discount factor ξ with a damped step `α_q = 2/(q+p)`. Conditional
//! expectations `E[ξ·Ē_{t,T} | F_t]` are estimated by least-squares regression
//! on the simulated common-noise paths.
//!
//! Pipeline:
//!
//! 1. [`params`]: model parameters, time grid and closed-form path factors.
//! 2. [`paths`]: the common-noise ensemble ([`paths::simulate_paths`]).
//! 3. [`regress`]: per-date conditional-expectation fits.
//! 4. [`solver`]: the fixed-point iteration ([`solver::solve`]).
//! 5. [`analytics`]: emissions, expected-emission curve, price components.
//!
//! [`oracle`] is a regression-free Gauss–Hermite reference solver for one or
//! two time steps, and [`experiment`] wires everything into configurable
//! runs that write JSON/CSV artifacts.

pub mod analytics;
pub mod error;
pub mod experiment;
pub mod oracle;
pub mod params;
pub mod paths;
pub mod quadrature;
mod reduce;
pub mod regress;
pub mod solver;

pub use error::{Error, Result};
pub use params::{GridSpec, InvestorParams, ModelParams};
pub use paths::PathEnsemble;
pub use regress::{CondExpModel, FeatureKind, FeatureSpec};
pub use solver::{DiscountField, Solution};
