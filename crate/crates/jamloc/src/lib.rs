//! Localization of a stationary GNSS jammer from crowdsensed
//! carrier-to-noise-density (CNIR) measurements.
//!
//! A jammer raises the noise-plus-interference floor of every GNSS receiver
//! near it, which shows up as a drop in the receiver-reported C/N0. Given the
//! known positions of a handful of moving receivers (for example mobile
//! phones) and their CNIR time series, this crate estimates the jammer
//! position by maximizing a detection-gated Gaussian likelihood over the
//! jammer location, the per-receiver jamming-to-noise scale and the
//! per-receiver pathloss exponent.
//!
//! The crate is organized around the processing pipeline:
//!
//! - [`types`]: shared domain types (positions, tracks, CNIR series,
//!   scenarios) and their validation.
//! - [`sim`]: a scenario simulator that generates straight-line receiver
//!   tracks and synthesizes CNIR measurements from the pathloss model.
//! - [`detect`]: baseline CNIR estimation and threshold detection, producing
//!   the per-sample gating mask used by the estimator.
//! - [`mle`]: the gated maximum-likelihood estimator - gradient descent over
//!   jammer position and jamming scales, closed-form noise variances, a
//!   per-receiver pathloss grid search and receiver selection.
//! - [`baselines`]: the two comparison estimators - detection-weighted mean
//!   position and calibrated range least squares.
//! - [`eval`]: a seeded Monte Carlo harness sweeping receiver subsets and
//!   reporting error percentiles and convergence rates.
//! - [`ingest`]: parsers for phone GNSS log files (GnssLogger-style CSV)
//!   and raw AGC smoothing.
//!
//! All randomness is driven by explicit seeds; every pipeline output is
//! reproducible from its inputs.

// validations use `!(x > 0.0)` so that NaN is rejected along with the
// out-of-range values; `x <= 0.0` would let NaN through
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod detect;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod mle;
pub mod rng;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    Baseline, CnirSample, CnirSeries, CnirValue, DetectionMask, ObservationSet, Position,
    ReceiverId, ReceiverObservations, ReceiverTrack, Scenario, TrackSample,
};
