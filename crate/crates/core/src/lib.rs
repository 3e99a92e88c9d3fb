//! Label propagation under subpopulation shift on finite instances.
//!
//! The crate builds finite instances (components, source/target/cover
//! measures, transformation balls, a teacher), checks expansion exactly by
//! subset enumeration, solves the consistency-constrained teacher-fitting
//! program by exhaustive search, and audits every step of the target-error
//! bound chain. A small all-layer margin toolkit covers the finite-sample
//! margin losses.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audit;
pub mod error;
pub mod expansion;
pub mod fixtures;
pub mod format;
pub mod instance;
pub mod margins;
pub mod propagation;
pub mod report;
pub mod rng;
pub mod scenarios;
pub mod sweep;

pub use error::{Error, Result};
pub use instance::{
    mixture_measure, sample_empirical, validate_instance, AssumptionReport, Classifier, Component, EmpiricalInstance,
    Label, Measure, NeighborhoodRelation, Point, ShiftInstance,
};

/// Absolute tolerance for every inequality comparison (expansion checks and audits).
pub const TOLERANCE: f64 = 1e-12;
