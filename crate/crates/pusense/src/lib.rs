//! Closed-form and simulated performance of an energy detector when the
//! primary user may arrive and depart several times within one sensing
//! window.
//!
//! The library models the channel as an alternating idle/busy renewal
//! process, enumerates (or dynamic-programs over) the status-change
//! patterns that can occur inside a window of `I` samples, weights each
//! pattern by its probability, and averages the detector's conditional
//! false-alarm and detection probabilities over those weights. A Monte
//! Carlo simulator provides an independent check, and a small CLI exposes
//! ROC sweeps, threshold calibration, model comparisons and throughput
//! evaluation.

pub mod config;
pub mod detector;
pub mod experiment;
pub mod hypothesis;
pub mod montecarlo;
pub mod numerics;
pub mod traffic;
