//! Desk-scale simulation and analysis of long trapped-ion strings.
//!
//! The crate is organized by subsystem:
//!
//! - [`chain`]: equilibrium positions, normal modes, Lamb-Dicke parameters
//! - [`coupling`]: spin-spin coupling matrix, power-law summary, addressing crosstalk
//! - [`dynamics`]: state-vector evolution of the transverse-field Ising and XY models
//! - [`entanglement`]: reduced states, logarithmic negativities, simulated tomography
//! - [`sequences`]: pi-pulse filter functions, line-noise sensing and feedforward compensation
//! - [`motion`]: semiclassical and Fock-space models of CPMG wavefront probing
//! - [`stochastics`]: heating-rate fits, crystal survival, phase-noise correlations
//! - [`cli`]: config-driven experiment runner and figure-data emission

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod cli;
pub mod constants;
pub mod coupling;
pub mod dynamics;
pub mod entanglement;
pub mod error;
pub mod fit;
pub mod io;
pub mod motion;
pub mod rng;
pub mod sequences;
pub mod stochastics;

pub use error::{Error, Result};
