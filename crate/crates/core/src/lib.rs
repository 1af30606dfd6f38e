//! Simulation and numerical-verification toolkit for the two-stage contact
//! process on finite tori.
//!
//! The crate bundles several independent views of the same model so they can
//! be checked against one another:
//!
//! * [`markov`]: direct event-driven simulation of the two-stage process and
//!   its dual on-off process, plus an exact generator-exponentiation oracle
//!   for tiny tori.
//! * [`graphical`]: the Poisson-mark graphical representation that couples
//!   every initial condition on one sample.
//! * [`branching`]: the two-type branching process and its closed-form
//!   survival probability.
//! * [`linear`]: the auxiliary linear system, its second-moment operator and
//!   moment integration.
//! * [`hitting`]: hitting probabilities of the simple random walk and of the
//!   auxiliary walk on offsets × {1,2,3}.
//! * [`bounds`]: closed-form bounds on the critical value and a Monte Carlo
//!   bracket.
//! * [`invariant`]: sampling of the upper invariant measure and the
//!   product-measure comparison.
//!
//! Infection rates are always the per-neighbour rate λ unless a function says
//! otherwise. Where the high-dimensional results use λ/(2d), callers pass the
//! unscaled value and the function applies the scaling itself.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail these checks

pub mod bounds;
pub mod branching;
pub mod error;
pub mod graphical;
pub mod hitting;
pub mod invariant;
pub mod lattice;
pub mod linear;
pub mod markov;
pub mod orbits;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use lattice::{Configuration, Params, Rates, Site, State, TorusSpec};
pub use stats::Estimate;
