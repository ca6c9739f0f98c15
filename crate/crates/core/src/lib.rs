//! Geometric analysis on weighted rooted trees and their Cantor-set boundaries.
//!
//! The library works with a rooted tree truncated at depth `N`, carrying the
//! uniformizing length metric with density `e^(-eps * level)` along edges and
//! the weighted measure with density `e^(-beta * level)`.  The boundary at
//! infinity is modelled by depth-`N` cylinder cells with the visual ultrametric
//! `(2/eps) e^(-eps k)` where `k` is the split level.
//!
//! Modules:
//! * [`tree`] — addresses, ancestry, geodesics, graph metric.
//! * [`metric`] — uniformizing metric, ball / half-ball measures, doubling,
//!   dimension condition, Poincaré checks.
//! * [`boundary`] — visual metric, uniform boundary measure, Ahlfors
//!   regularity.
//! * [`functions`] — Besov seminorms, Newtonian energy, upper gradients, test
//!   function generators.
//! * [`trace`] — trace and extension operators with the sharp smoothness
//!   exponent, sharpness and embedding probes.
//! * [`maps`] — quasisymmetries of boundaries, rough quasiisometries of trees,
//!   conversions in both directions, energy pullback, Besov pushforward,
//!   rigidity.

pub mod boundary;
pub mod error;
pub mod functions;
pub mod maps;
pub mod metric;
pub mod trace;
pub mod tree;

pub use error::{Error, Result};
