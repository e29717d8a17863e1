//! Explainable traffic-accident anticipation.
//!
//! A GRU over per-frame feature maps emits accident probabilities
//! ([`antnet`]), trained with an early-anticipation loss ([`trainer`]).
//! Predictions are explained with CAM-family saliency ([`xai`]) and compared
//! against human gaze ([`gaze`]) using the saliency and anticipation metrics
//! in [`metrics`]. [`datasets`] handles feature-map files, manifests and a
//! synthetic stand-in dataset; [`tensorkit`] is the small autodiff kernel
//! underneath it all.

pub mod antnet;
pub mod datasets;
pub mod error;
pub mod gaze;
pub mod metrics;
pub mod tensorkit;
pub mod trainer;
pub mod xai;

pub use error::{Error, Result};
