use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

/// Nanoseconds since simulation start.
///
/// Always finite and non-negative, which makes the ordering total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TimeNs(f64);

impl TimeNs {
    pub const ZERO: TimeNs = TimeNs(0.0);

    pub fn new(ns: f64) -> Result<Self> {
        if ns.is_finite() && ns >= 0.0 {
            // normalise -0.0 so bit patterns compare equal
            Ok(TimeNs(ns + 0.0))
        } else {
            Err(param(format!("time must be finite and >= 0, got {ns}")))
        }
    }

    /// Panics on negative or non-finite input. For literals and values
    /// already known to be valid.
    pub fn from_ns(ns: f64) -> Self {
        Self::new(ns).expect("valid time")
    }

    pub fn ns(self) -> f64 {
        self.0
    }

    /// Signed difference `self - earlier` in nanoseconds.
    pub fn since(self, earlier: TimeNs) -> f64 {
        self.0 - earlier.0
    }
}

impl Eq for TimeNs {}

impl PartialOrd for TimeNs {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TimeNs {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add<f64> for TimeNs {
    type Output = TimeNs;
    fn add(self, rhs: f64) -> TimeNs {
        TimeNs::from_ns(self.0 + rhs)
    }
}

impl Sub<f64> for TimeNs {
    type Output = TimeNs;
    fn sub(self, rhs: f64) -> TimeNs {
        TimeNs::from_ns(self.0 - rhs)
    }
}

impl TryFrom<f64> for TimeNs {
    type Error = crate::Error;
    fn try_from(v: f64) -> Result<Self> {
        TimeNs::new(v)
    }
}

impl From<TimeNs> for f64 {
    fn from(t: TimeNs) -> f64 {
        t.0
    }
}

impl fmt::Display for TimeNs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}", self.0)
    }
}
