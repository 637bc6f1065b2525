//! Queue-based comparison detectors: an occupancy threshold and a
//! windowed occupancy-gradient threshold.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::time::TimeNs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueEvent {
    Enqueue { bytes: u64 },
    Dequeue { bytes: u64 },
}

/// Occupancy of an egress buffer right after `event`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueSample {
    pub t: TimeNs,
    pub queue_bytes: u64,
    pub event: QueueEvent,
}

impl QueueSample {
    pub fn occupancy_before(&self) -> u64 {
        match self.event {
            QueueEvent::Enqueue { bytes } => self.queue_bytes.saturating_sub(bytes),
            QueueEvent::Dequeue { bytes } => self.queue_bytes + bytes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub t: TimeNs,
    pub queue_bytes: u64,
    /// Net growth rate over the closed window (gradient detector only).
    pub rate_bytes_per_s: Option<f64>,
}

fn check_order(last: Option<TimeNs>, t: TimeNs) -> Result<()> {
    match last {
        Some(prev) if t < prev => Err(Error::Ordering { prev: prev.ns(), got: t.ns() }),
        _ => Ok(()),
    }
}

/// Fires once when occupancy reaches the threshold, then stays quiet until
/// the queue drains below half the threshold.
#[derive(Debug, Clone)]
pub struct QlenDetector {
    threshold_bytes: u64,
    armed: bool,
    last_t: Option<TimeNs>,
}

impl QlenDetector {
    pub fn new(threshold_bytes: u64) -> Result<Self> {
        if threshold_bytes == 0 {
            return Err(param("queue-length threshold must be > 0"));
        }
        Ok(QlenDetector { threshold_bytes, armed: true, last_t: None })
    }

    pub fn threshold_bytes(&self) -> u64 {
        self.threshold_bytes
    }

    pub fn is_armed(&self) -> bool {
        self.armed
    }

    pub fn observe(&mut self, sample: &QueueSample) -> Result<Option<Detection>> {
        check_order(self.last_t, sample.t)?;
        self.last_t = Some(sample.t);
        if self.armed {
            if sample.queue_bytes >= self.threshold_bytes {
                self.armed = false;
                return Ok(Some(Detection {
                    t: sample.t,
                    queue_bytes: sample.queue_bytes,
                    rate_bytes_per_s: None,
                }));
            }
        } else if 2 * sample.queue_bytes < self.threshold_bytes {
            self.armed = true;
        }
        Ok(None)
    }
}

/// Parameters and current window of the gradient detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientWindow {
    pub window_ns: f64,
    pub start_t: TimeNs,
    pub start_bytes: u64,
    pub threshold_bytes_per_s: f64,
}

/// Tumbling windows of fixed length anchored at the first observed sample.
/// A window `[start, start + W)` closes when time reaches its end; the
/// detector fires at the boundary when the net occupancy change over the
/// window, divided by `W`, reaches the threshold.
#[derive(Debug, Clone)]
pub struct QgradDetector {
    window_ns: f64,
    threshold_bytes_per_s: f64,
    origin: Option<TimeNs>,
    index: u64,
    start_bytes: u64,
    current_bytes: u64,
    last_t: Option<TimeNs>,
}

impl QgradDetector {
    pub fn new(window_ns: f64, threshold_bytes_per_s: f64) -> Result<Self> {
        if !(window_ns.is_finite() && window_ns > 0.0) {
            return Err(param(format!("gradient window must be > 0, got {window_ns}")));
        }
        if !(threshold_bytes_per_s.is_finite() && threshold_bytes_per_s > 0.0) {
            return Err(param(format!(
                "gradient threshold must be > 0, got {threshold_bytes_per_s}"
            )));
        }
        Ok(QgradDetector {
            window_ns,
            threshold_bytes_per_s,
            origin: None,
            index: 0,
            start_bytes: 0,
            current_bytes: 0,
            last_t: None,
        })
    }

    pub fn window(&self) -> Option<GradientWindow> {
        self.origin.map(|_| GradientWindow {
            window_ns: self.window_ns,
            start_t: self.boundary(self.index),
            start_bytes: self.start_bytes,
            threshold_bytes_per_s: self.threshold_bytes_per_s,
        })
    }

    fn boundary(&self, k: u64) -> TimeNs {
        let origin = self.origin.expect("window origin");
        TimeNs::from_ns(origin.ns() + k as f64 * self.window_ns)
    }

    /// Closes every window that ends at or before `t`, using the occupancy
    /// in force just before `t`. Returns the detection of the first closed
    /// window if it crossed the threshold.
    pub fn advance(&mut self, t: TimeNs) -> Result<Option<Detection>> {
        check_order(self.last_t, t)?;
        self.last_t = Some(t);
        let Some(origin) = self.origin else {
            return Ok(None);
        };
        let end = self.boundary(self.index + 1);
        if t < end {
            return Ok(None);
        }
        let growth = self.current_bytes as f64 - self.start_bytes as f64;
        let rate = growth * 1e9 / self.window_ns;
        let detection = (rate >= self.threshold_bytes_per_s).then_some(Detection {
            t: end,
            queue_bytes: self.current_bytes,
            rate_bytes_per_s: Some(rate),
        });
        self.index += 1;
        self.start_bytes = self.current_bytes;
        // the remaining windows up to t saw no events, hence zero growth
        let mut k = ((t.ns() - origin.ns()) / self.window_ns).floor().max(0.0) as u64;
        while k > 0 && self.boundary(k) > t {
            k -= 1;
        }
        while self.boundary(k + 1) <= t {
            k += 1;
        }
        self.index = self.index.max(k);
        Ok(detection)
    }

    /// Records a sample. Call [`advance`](Self::advance) with the sample's
    /// time first.
    pub fn apply(&mut self, sample: &QueueSample) -> Result<()> {
        check_order(self.last_t, sample.t)?;
        self.last_t = Some(sample.t);
        if self.origin.is_none() {
            self.origin = Some(sample.t);
            self.index = 0;
            self.start_bytes = sample.occupancy_before();
        }
        self.current_bytes = sample.queue_bytes;
        Ok(())
    }

    pub fn observe(&mut self, sample: &QueueSample) -> Result<Option<Detection>> {
        let d = self.advance(sample.t)?;
        self.apply(sample)?;
        Ok(d)
    }
}
