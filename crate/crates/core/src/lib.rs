//! Pedestrian positioning from foot-mounted IMU steps and WiFi scans, without
//! a radio map.
//!
//! The [`filter`] module holds the trajectory-history particle filter: every
//! particle is a full candidate path, and WiFi scans that resemble earlier
//! scans act as loop closures that penalize particles whose own path does not
//! close. [`gp`] is a Gaussian-process likelihood baseline for comparison,
//! [`sim`] generates synthetic walks, and [`harness`] covers datasets,
//! pipelines, metrics and plot output used by the `pdrloop` CLI.

// Negated float comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod error;
pub mod filter;
pub mod gp;
pub mod harness;
pub mod model;
pub mod par;
pub mod sim;
pub mod sync;

pub use error::{Error, Result};
pub use filter::{dead_reckon, knn_estimate, ClosureMatch, Ensemble, StepOutcome, WeightUpdate};
pub use model::{
    fill_union, rss_distance, ApId, FilterConfig, Heading, ObservationEntry, Particle, Position,
    RssReading, RssVector, StepMeasurement,
};
pub use par::Execution;
pub use sync::{align_observations, AlignedEpoch};
