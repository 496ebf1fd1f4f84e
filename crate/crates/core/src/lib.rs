//! Queue-reactive limit order book toolkit.
//!
//! Event reconstruction from L2 data, maximum-likelihood intensity estimation,
//! invariant laws, exact event-driven simulation with reference-price
//! dynamics, calibration of the price mechanism, and execution analytics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod book;
pub mod calibrate;
pub mod error;
pub mod estimate;
pub mod ingest;
pub mod pipeline;
pub mod rng;
pub mod simulate;
pub mod stationary;
pub mod synthetic;

pub use book::{EventType, IntensityModel, LobState, ModelKind, QueueIndex, RateTable, Regime};
pub use error::{Error, Result};
