//! Simulation and analysis of heralded entanglement between two atomic
//! ensemble memories linked by long fiber.
//!
//! - [`fock`]: truncated Fock-space states, linear optics, loss and clicks.
//! - [`budget`]: fiber and detector budget, herald statistics, rate scaling.
//! - [`lock`]: dual-band phase locking model and loop simulation.
//! - [`protocol`]: Monte Carlo trial engine and fringe scans.
//! - [`analysis`]: fringe fits, visibility factors and concurrence.
//! - [`scenario`]: versioned scenario files and bundled presets.
//! - [`reference`] and [`report`]: published values, comparison and output files.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod budget;
pub mod error;
pub mod fock;
pub mod lock;
pub mod protocol;
pub mod reference;
pub mod report;
pub mod scenario;

pub use budget::{Detector, HeraldStats, LinkParams};
pub use error::{Error, Result};
pub use protocol::{FringeData, Scenario, Simulator, TrialRecord};
