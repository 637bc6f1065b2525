//! Switch-level incast detection.
//!
//! The crate provides the interval hypothesis test behind the detector
//! ([`hypothesis`]), the online per-port detector ([`didie`]), two
//! queue-based comparison detectors ([`baseline`]), a deterministic
//! dumbbell simulator ([`netsim`]) and the experiment layer that scores
//! detectors against generator ground truth ([`metrics`], [`experiment`]).

pub mod baseline;
pub mod cdf;
pub mod didie;
pub mod error;
pub mod experiment;
pub mod hypothesis;
pub mod metrics;
pub mod model;
pub mod netsim;
pub mod sampling;
pub mod time;

pub use error::{Error, Result};
pub use time::TimeNs;
