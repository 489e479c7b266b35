//! Heterogeneous-domain fault diagnosis workbench.
//!
//! The crate simulates a closed-loop CSTR under three operating modes and
//! nine faults ([`cstr`]), windows runs into labelled samples and assembles
//! heterogeneous-domain tasks ([`datasets`]), fills in missing
//! (mode, fault) pairs by moment-aligned cross-domain mapping and Beta
//! Mix-Up ([`samplegen`]), and trains a temporal-spatial attention network
//! ([`network`], [`trainer`]) on a small reverse-mode autodiff core
//! ([`diffcore`]).
//!
//! See `examples/` for one runnable program per capability.

pub mod cstr;
pub mod diffcore;
pub mod datasets;
pub mod error;
pub mod jsonio;
pub mod network;
pub mod samplegen;
pub mod trainer;
pub mod cli;

pub use error::{Error, Result};
