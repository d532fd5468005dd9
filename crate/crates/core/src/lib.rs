//! Feynman–Kac loop-gas simulation for multi-type Bose gases with
//! non-negative finite-range pair interactions.
//!
//! The crate is organised bottom-up: [`model`] holds physical parameters,
//! [`bridge`] samples pinned Brownian bridges, [`loopgas`] defines loop
//! configurations and their weights, [`mc`] runs the grand-canonical sampler
//! and estimators, [`analytic`] evaluates the series bounds, and [`oracle`]
//! does exact diagonalization on small lattices.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod bridge;
pub mod loopgas;
pub mod mc;
pub mod model;
pub mod oracle;

pub use bridge::{gaussian_mass, sample_bridge, BridgePath};
pub use model::{Cube, ExternalCC, ModelParams, PairPotential, Point};
