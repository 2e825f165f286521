//! Information propagation speed of virtual-MIMO broadcast on a two-lane,
//! bidirectional highway.
//!
//! [`analytic`] evaluates the renewal-reward closed forms, [`engine`] runs the
//! slotted Monte-Carlo simulator over [`traffic`], and [`experiments`] sweeps
//! parameters and writes CSV tables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod model;
pub mod seed;
pub mod traffic;
pub mod validate;

pub use error::{Error, Result};
pub use model::{RawThresholds, ScenarioParams};
