//! Iris-recognition quality-gate workbench.
//!
//! A desk-scale pipeline for studying how pupil dilation and eyelid occlusion
//! degrade iris matching: a deterministic synthetic eye generator, per-image
//! quality metrics and validators, rubber-sheet normalization with Gabor
//! phase codes, a bit-packed masked Hamming matcher with rotation
//! minimization, a pairing/decidability evaluation harness, and a
//! logistic-regression quality gate with bootstrapped discard sweeps.

pub mod config;
pub mod encode;
pub mod error;
pub mod eval;
pub mod gate;
pub mod matcher;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod seeding;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
