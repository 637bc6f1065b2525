//! Samplers for the traffic model: exponential gaps, half-normal offsets and
//! load-derived arrival rates.
//!
//! Each sampler has a pure `*_from_*` counterpart taking the underlying
//! uniform or standard-normal draw, so the transforms can be tested with
//! forced inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

pub type SimRng = ChaCha8Rng;

/// Independent, reproducible stream `stream` derived from `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HalfNormalScale(f64);

impl HalfNormalScale {
    pub fn new(sigma_ns: f64) -> Result<Self> {
        if sigma_ns.is_finite() && sigma_ns > 0.0 {
            Ok(HalfNormalScale(sigma_ns))
        } else {
            Err(param(format!("half-normal scale must be > 0, got {sigma_ns}")))
        }
    }

    pub fn sigma_ns(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for HalfNormalScale {
    type Error = crate::Error;
    fn try_from(v: f64) -> Result<Self> {
        HalfNormalScale::new(v)
    }
}

impl From<HalfNormalScale> for f64 {
    fn from(s: HalfNormalScale) -> f64 {
        s.0
    }
}

/// `-ln(u) / rate` for `u` in `(0, 1]`.
pub fn exponential_from_uniform(rate_per_ns: f64, u: f64) -> Result<f64> {
    if !(rate_per_ns.is_finite() && rate_per_ns > 0.0) {
        return Err(param(format!("exponential rate must be > 0, got {rate_per_ns}")));
    }
    if !(u > 0.0 && u <= 1.0) {
        return Err(param(format!("uniform draw must lie in (0, 1], got {u}")));
    }
    Ok(-u.ln() / rate_per_ns)
}

pub fn sample_exponential<R: Rng + ?Sized>(rate_per_ns: f64, rng: &mut R) -> Result<f64> {
    // random::<f64>() is in [0, 1); flip it onto (0, 1]
    let u = 1.0 - rng.random::<f64>();
    exponential_from_uniform(rate_per_ns, u)
}

pub fn half_normal_from_standard(scale: HalfNormalScale, z: f64) -> f64 {
    scale.0 * z.abs()
}

pub fn sample_half_normal<R: Rng + ?Sized>(scale: HalfNormalScale, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    half_normal_from_standard(scale, z)
}

/// Mean inter-arrival (ns) of flows that load a link to `load_fraction`.
pub fn mean_interarrival_from_load(
    avg_flow_bits: f64,
    link_rate_bps: f64,
    load_fraction: f64,
) -> Result<f64> {
    for (name, v) in [
        ("average flow size", avg_flow_bits),
        ("link rate", link_rate_bps),
        ("load fraction", load_fraction),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(param(format!("{name} must be > 0, got {v}")));
        }
    }
    if load_fraction > 1.0 {
        return Err(param(format!("load fraction must be <= 1, got {load_fraction}")));
    }
    Ok(avg_flow_bits / link_rate_bps / load_fraction * 1e9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_forced_uniform() {
        let dt = exponential_from_uniform(1e-5, (-1.0f64).exp()).unwrap();
        assert_relative_eq!(dt, 1e5, max_relative = 1e-12);
        assert_eq!(exponential_from_uniform(1e-5, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn exponential_rejects_bad_rate() {
        let mut rng = seeded_rng(1, 0);
        assert!(sample_exponential(0.0, &mut rng).is_err());
        assert!(sample_exponential(-1.0, &mut rng).is_err());
        assert!(exponential_from_uniform(1.0, 0.0).is_err());
    }

    #[test]
    fn exponential_mean_monte_carlo() {
        let mut rng = seeded_rng(7, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_exponential(1e-5, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 1e5).abs() / 1e5 < 0.01, "mean {mean}");
    }

    #[test]
    fn half_normal_zero_draw() {
        let s = HalfNormalScale::new(3.0).unwrap();
        assert_eq!(half_normal_from_standard(s, 0.0), 0.0);
        assert_eq!(half_normal_from_standard(s, -2.0), 6.0);
    }

    #[test]
    fn half_normal_moments_and_sign() {
        let s = HalfNormalScale::new(3.0).unwrap();
        let mut rng = seeded_rng(11, 0);
        let n = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let v = sample_half_normal(s, &mut rng);
            assert!(v >= 0.0);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let expect = 3.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - expect).abs() / expect < 0.02, "mean {mean}");
        assert!((sum_sq / n as f64 - 9.0).abs() / 9.0 < 0.02);
    }

    #[test]
    fn scale_must_be_positive() {
        assert!(HalfNormalScale::new(0.0).is_err());
        assert!(HalfNormalScale::new(-1.0).is_err());
    }

    #[test]
    fn seeded_streams_are_reproducible() {
        let a: Vec<u64> = (0..16).map({
            let mut r = seeded_rng(42, 3);
            move |_| r.random()
        }).collect();
        let b: Vec<u64> = (0..16).map({
            let mut r = seeded_rng(42, 3);
            move |_| r.random()
        }).collect();
        let c: Vec<u64> = (0..16).map({
            let mut r = seeded_rng(42, 4);
            move |_| r.random()
        }).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn interarrival_from_load() {
        assert_relative_eq!(mean_interarrival_from_load(9.6e5, 1e9, 0.30).unwrap(), 3.2e6, max_relative = 1e-12);
        assert_relative_eq!(mean_interarrival_from_load(9.6e5, 1e9, 0.60).unwrap(), 1.6e6, max_relative = 1e-12);
        assert_relative_eq!(mean_interarrival_from_load(1e9 * 1e-9, 1e9, 1.0).unwrap(), 1.0, max_relative = 1e-12);
        assert!(mean_interarrival_from_load(0.0, 1e9, 0.3).is_err());
        assert!(mean_interarrival_from_load(1.0, -1.0, 0.3).is_err());
        assert!(mean_interarrival_from_load(1.0, 1e9, 0.0).is_err());
    }
}
