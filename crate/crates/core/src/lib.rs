//! Streaming-perception evaluation for camera-based 3D detection.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! - [`interp`] densifies 2 Hz keyframe annotations to the camera rate.
//! - [`stream_sim`] replays per-frame detector outputs under a runtime
//!   distribution and emits the predictions a deployment would produce.
//! - [`baseline`] pushes stale predictions forward along their (optionally
//!   Kalman-filtered) velocities.
//! - [`metrics`] scores every input timestamp against the latest finished
//!   prediction and aggregates mAP-S, the streaming TP errors and NDS-S.
//! - [`synth`] builds scenes and detectors with known behavior.
//!
//! The `asap` binary wraps each stage as a subcommand; see [`cli`].

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod cli;
pub mod data;
pub mod error;
pub mod geom;
pub mod interp;
pub mod metrics;
pub mod report;
pub mod stream_sim;
pub mod synth;

pub use error::{Error, Result};
