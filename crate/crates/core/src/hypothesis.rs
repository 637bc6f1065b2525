//! Interval hypothesis test between regular (H0) and incast (H1) flows.
//!
//! Under H0 the gap to the previous same-DIP flow is exponential with rate
//! `beta = lambda / |I|`; under H1 it is half-normal with scale `sigma`.
//! The likelihood ratio is strictly decreasing in the gap inside the
//! operating regime (`sigma * beta << 1`), so the LR test is the interval
//! test `gap <= gamma` and everything here is expressed in gamma-space:
//!
//! ```text
//! fpr(gamma) = 1 - exp(-beta * gamma)
//! tpr(gamma) = erf(gamma / (sigma * sqrt(2)))
//! J(gamma)   = C_FN * (1 - tpr) + C_FP * fpr
//! ```
//!
//! Setting `dJ/dgamma = 0` and taking logs gives the quadratic
//! `gamma^2 / (2 sigma^2) - beta * gamma + ln(B / A) = 0` with
//! `A = 2 C_FN / (sigma sqrt(2 pi))` and `B = beta * C_FP`, whose positive
//! root is the optimum whenever `B <= A`.

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::error::{param, Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Default lower bound on the regular-flow rate (per ns).
pub const DEFAULT_LAMBDA_FLOOR_PER_NS: f64 = 1e-9;

/// `sigma * beta` below this counts as inside the operating regime.
pub const REGIME_LIMIT: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisParams {
    pub lambda11_per_ns: f64,
    pub card_i: u32,
    pub sigma_ns: f64,
    pub lambda_floor_per_ns: f64,
}

impl HypothesisParams {
    pub fn new(lambda11_per_ns: f64, card_i: u32, sigma_ns: f64) -> Result<Self> {
        Self::with_floor(lambda11_per_ns, card_i, sigma_ns, DEFAULT_LAMBDA_FLOOR_PER_NS)
    }

    pub fn with_floor(
        lambda11_per_ns: f64,
        card_i: u32,
        sigma_ns: f64,
        lambda_floor_per_ns: f64,
    ) -> Result<Self> {
        let p = HypothesisParams { lambda11_per_ns, card_i, sigma_ns, lambda_floor_per_ns };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda11_per_ns.is_finite() && self.lambda11_per_ns >= 0.0) {
            return Err(param(format!("lambda11 must be >= 0, got {}", self.lambda11_per_ns)));
        }
        if self.card_i < 1 {
            return Err(param("|I| must be >= 1"));
        }
        if !(self.sigma_ns.is_finite() && self.sigma_ns > 0.0) {
            return Err(param(format!("sigma must be > 0, got {}", self.sigma_ns)));
        }
        if !(self.lambda_floor_per_ns.is_finite() && self.lambda_floor_per_ns > 0.0) {
            return Err(param(format!(
                "lambda floor must be > 0, got {}",
                self.lambda_floor_per_ns
            )));
        }
        Ok(())
    }

    pub fn effective_rate(&self) -> f64 {
        self.lambda11_per_ns.max(self.lambda_floor_per_ns)
    }

    /// `beta = lambda / |I|`, the rate of same-DIP regular pairs.
    pub fn beta(&self) -> f64 {
        self.effective_rate() / self.card_i as f64
    }

    pub fn in_regime(&self) -> bool {
        self.sigma_ns * self.beta() < REGIME_LIMIT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub c_fn: f64,
    pub c_fp: f64,
}

impl CostParams {
    pub fn new(c_fn: f64, c_fp: f64) -> Result<Self> {
        let c = CostParams { c_fn, c_fp };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_fn.is_finite() && self.c_fn > 0.0 && self.c_fp.is_finite() && self.c_fp > 0.0) {
            return Err(param(format!(
                "costs must be > 0, got C_FN={} C_FP={}",
                self.c_fn, self.c_fp
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub gamma_ns: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn check_gap(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(param(format!("{name} must be finite and >= 0, got {v}")))
    }
}

pub fn pdf_h0(dt_ns: f64, p: &HypothesisParams) -> Result<f64> {
    check_gap("interval", dt_ns)?;
    let beta = p.beta();
    Ok(beta * (-beta * dt_ns).exp())
}

pub fn pdf_h1(dt_ns: f64, p: &HypothesisParams) -> Result<f64> {
    check_gap("interval", dt_ns)?;
    let s = p.sigma_ns;
    Ok(2.0 / (s * SQRT_2PI) * (-dt_ns * dt_ns / (2.0 * s * s)).exp())
}

/// `ln(f_H1(eps) / f_H0(eps))`, evaluated without forming either density.
fn log_ratio(h1_gap: f64, h0_gap: f64, p: &HypothesisParams) -> f64 {
    let s = p.sigma_ns;
    let beta = p.beta();
    (2.0 / (s * SQRT_2PI * beta)).ln() - h1_gap * h1_gap / (2.0 * s * s) + beta * h0_gap
}

pub fn likelihood_ratio(eps_ns: f64, p: &HypothesisParams) -> Result<f64> {
    check_gap("interval", eps_ns)?;
    Ok(log_ratio(eps_ns, eps_ns, p).exp())
}

/// Ratio for a flow arriving `eps_ns` after the latest flow of an incast
/// that is already in progress. H1 measures from the incast's leading flow,
/// H0 from the last regular flow.
pub fn likelihood_ratio_mid_incast(
    eps_ns: f64,
    t_latest_incast_ns: f64,
    t_incast_lead_ns: f64,
    t_last_regular_ns: f64,
    p: &HypothesisParams,
) -> Result<f64> {
    check_gap("interval", eps_ns)?;
    if t_latest_incast_ns < t_incast_lead_ns {
        return Err(param("latest incast arrival precedes the leading flow"));
    }
    if t_last_regular_ns > t_latest_incast_ns {
        return Err(param("last regular arrival follows the latest incast arrival"));
    }
    let h1_gap = eps_ns + (t_latest_incast_ns - t_incast_lead_ns);
    let h0_gap = eps_ns + (t_latest_incast_ns - t_last_regular_ns);
    Ok(log_ratio(h1_gap, h0_gap, p).exp())
}

pub fn roc_point(gamma_ns: f64, p: &HypothesisParams) -> RocPoint {
    let g = gamma_ns.max(0.0);
    RocPoint {
        gamma_ns: g,
        fpr: -(-p.beta() * g).exp_m1(),
        tpr: erf(g / (p.sigma_ns * SQRT_2)),
    }
}

/// Threshold that yields false-positive rate `fpr`.
pub fn gamma_for_fpr(fpr: f64, p: &HypothesisParams) -> Result<f64> {
    if !(fpr >= 0.0 && fpr < 1.0) {
        return Err(param(format!("fpr must lie in [0, 1), got {fpr}")));
    }
    Ok(-(-fpr).ln_1p() / p.beta())
}

/// The analytic ROC curve: tpr as a function of fpr.
pub fn tpr_from_fpr(fpr: f64, p: &HypothesisParams) -> Result<f64> {
    let gamma = gamma_for_fpr(fpr, p)?;
    Ok(erf(gamma / (p.sigma_ns * SQRT_2)))
}

pub fn cost(gamma_ns: f64, p: &HypothesisParams, c: &CostParams) -> f64 {
    let g = gamma_ns.max(0.0);
    let fnr = erfc(g / (p.sigma_ns * SQRT_2));
    let fpr = -(-p.beta() * g).exp_m1();
    c.c_fn * fnr + c.c_fp * fpr
}

pub fn cost_derivative(gamma_ns: f64, p: &HypothesisParams, c: &CostParams) -> f64 {
    let s = p.sigma_ns;
    let beta = p.beta();
    let a = 2.0 * c.c_fn / (s * SQRT_2PI);
    -a * (-gamma_ns * gamma_ns / (2.0 * s * s)).exp() + beta * c.c_fp * (-beta * gamma_ns).exp()
}

/// Positive root of the stationarity quadratic.
pub fn optimal_threshold_closed_form(p: &HypothesisParams, c: &CostParams) -> Result<f64> {
    p.validate()?;
    c.validate()?;
    let s = p.sigma_ns;
    let beta = p.beta();
    let a = 2.0 * c.c_fn / (s * SQRT_2PI);
    let b = beta * c.c_fp;
    let ln_ratio = (b / a).ln();
    if ln_ratio > 0.0 {
        return Err(Error::Regime { ln_ratio });
    }
    let disc = beta * beta - 2.0 / (s * s) * ln_ratio;
    Ok(s * s * (beta + disc.sqrt()))
}

/// Brute-force minimiser of [`cost`]: a uniform grid over `[0, gamma_max]`
/// followed by two local refinement rounds around the best cell.
/// Shares nothing with the closed form beyond the cost function itself.
pub fn optimal_threshold_grid(
    p: &HypothesisParams,
    c: &CostParams,
    gamma_max_ns: f64,
    steps: usize,
) -> Result<f64> {
    p.validate()?;
    c.validate()?;
    if steps < 1000 {
        return Err(param(format!("grid needs >= 1000 steps, got {steps}")));
    }
    if !(gamma_max_ns >= 20.0 * p.sigma_ns) {
        return Err(param(format!(
            "gamma_max {gamma_max_ns} must be >= 20 sigma ({})",
            20.0 * p.sigma_ns
        )));
    }
    let (mut lo, mut hi) = (0.0, gamma_max_ns);
    let mut best = 0.0;
    for _round in 0..3 {
        let h = (hi - lo) / steps as f64;
        let mut best_j = f64::INFINITY;
        let mut best_i = 0usize;
        for i in 0..=steps {
            let g = lo + h * i as f64;
            let j = cost(g, p, c);
            if j < best_j {
                best_j = j;
                best_i = i;
            }
        }
        best = lo + h * best_i as f64;
        let new_lo = (best - h).max(0.0);
        hi = (best + h).min(gamma_max_ns);
        lo = new_lo;
    }
    Ok(best)
}

/// Number of sign changes of `dJ/dgamma` on a uniform grid over `(0, upper]`.
pub fn derivative_sign_changes(
    p: &HypothesisParams,
    c: &CostParams,
    upper_ns: f64,
    points: usize,
) -> usize {
    let mut changes = 0;
    let mut prev: Option<bool> = None;
    for i in 1..=points {
        let g = upper_ns * i as f64 / points as f64;
        let d = cost_derivative(g, p, c);
        if d == 0.0 {
            continue;
        }
        let pos = d > 0.0;
        if let Some(pp) = prev {
            if pp != pos {
                changes += 1;
            }
        }
        prev = Some(pos);
    }
    changes
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(lambda: f64, card: u32, sigma: f64) -> HypothesisParams {
        HypothesisParams::new(lambda, card, sigma).unwrap()
    }

    /// Trapezoid rule on a fine grid; independent of any closed form.
    fn integrate(f: impl Fn(f64) -> f64, upper: f64, n: usize) -> f64 {
        let h = upper / n as f64;
        let mut acc = 0.5 * (f(0.0) + f(upper));
        for i in 1..n {
            acc += f(h * i as f64);
        }
        acc * h
    }

    #[test]
    fn h0_density_values() {
        let p = params(1e-5, 8, 25.0);
        assert_relative_eq!(pdf_h0(0.0, &p).unwrap(), 1.25e-6, max_relative = 1e-12);
        assert_relative_eq!(pdf_h0(8e5, &p).unwrap(), 4.598_493_014_643_03e-7, max_relative = 1e-10);
        assert!(pdf_h0(-1.0, &p).is_err());
        let area = integrate(|x| pdf_h0(x, &p).unwrap(), 40.0 * 8e5, 400_000);
        assert!((area - 1.0).abs() < 1e-6, "area {area}");
    }

    #[test]
    fn h1_density_values() {
        let p = params(1e-5, 8, 25.0);
        assert_relative_eq!(pdf_h1(0.0, &p).unwrap(), 0.031_915_382_432_114_61, max_relative = 1e-12);
        assert_relative_eq!(pdf_h1(25.0, &p).unwrap(), 0.019_357_657_961_531_47, max_relative = 1e-12);
        assert!(pdf_h1(-0.5, &p).is_err());
        let area = integrate(|x| pdf_h1(x, &p).unwrap(), 20.0 * 25.0, 200_000);
        assert!((area - 1.0).abs() < 1e-8, "area {area}");
    }

    #[test]
    fn ratio_at_zero() {
        let p = params(1e-5, 1, 25.0);
        assert_relative_eq!(likelihood_ratio(0.0, &p).unwrap(), 3191.538_243_211_461, max_relative = 1e-12);
        let direct = pdf_h1(7.0, &p).unwrap() / pdf_h0(7.0, &p).unwrap();
        assert_relative_eq!(likelihood_ratio(7.0, &p).unwrap(), direct, max_relative = 1e-12);
    }

    #[test]
    fn ratio_tail_vanishes() {
        let p = params(1e-5, 8, 25.0);
        assert!(likelihood_ratio(1e4, &p).unwrap() < 1e-30);
    }

    #[test]
    fn ratio_decreasing_in_regime() {
        let p = params(1e-5, 8, 25.0);
        assert!(p.in_regime());
        let n = 10_000;
        let mut prev = f64::INFINITY;
        for i in 0..=n {
            let eps = 10.0 * 25.0 * i as f64 / n as f64;
            let v = likelihood_ratio(eps, &p).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn mid_incast_reduces_without_shifts() {
        let p = params(1e-5, 8, 25.0);
        let plain = likelihood_ratio(5.0, &p).unwrap();
        let mid = likelihood_ratio_mid_incast(5.0, 1000.0, 1000.0, 1000.0, &p).unwrap();
        assert_eq!(plain, mid);
    }

    #[test]
    fn mid_incast_direct_substitution() {
        let p = params(1e-5, 8, 25.0);
        let mid = likelihood_ratio_mid_incast(5.0, 8e5 + 12.0, 8e5, 12.0, &p).unwrap();
        // independent evaluation of the two shifted densities (python/mpmath)
        assert_relative_eq!(mid, 55_078.024_111_744_96, max_relative = 1e-12);
        let direct = pdf_h1(17.0, &p).unwrap() / pdf_h0(5.0 + 8e5, &p).unwrap();
        assert_relative_eq!(mid, direct, max_relative = 1e-12);
    }

    #[test]
    fn mid_incast_factorises_for_tight_runs() {
        let p = params(1e-5, 8, 25.0);
        let (eps, lead, latest, last_reg) = (0.01, 5e5, 5e5 + 1e-3, 1e5);
        let mid = likelihood_ratio_mid_incast(eps, latest, lead, last_reg, &p).unwrap();
        let approx = likelihood_ratio(eps, &p).unwrap() * (p.beta() * (latest - last_reg)).exp();
        assert!(((mid - approx) / approx).abs() < 1e-6);
    }

    #[test]
    fn mid_incast_ordering_errors() {
        let p = params(1e-5, 8, 25.0);
        assert!(likelihood_ratio_mid_incast(1.0, 10.0, 20.0, 0.0, &p).is_err());
        assert!(likelihood_ratio_mid_incast(1.0, 10.0, 5.0, 11.0, &p).is_err());
    }

    #[test]
    fn roc_examples() {
        let p = params(8e-5, 8, 25.0);
        let z = roc_point(0.0, &p);
        assert_eq!((z.fpr, z.tpr), (0.0, 0.0));
        let r = roc_point(1000.0, &p);
        assert_relative_eq!(r.fpr, 0.009_950_166_250_831_946, max_relative = 1e-12);
        assert!((r.tpr - 1.0).abs() < 1e-15);
        assert_eq!(tpr_from_fpr(0.0, &p).unwrap(), 0.0);
        assert!((tpr_from_fpr(0.009_950_2, &p).unwrap() - 1.0).abs() < 1e-12);
        assert!(tpr_from_fpr(1.0, &p).is_err());
    }

    #[test]
    fn roc_self_consistent_and_monotone() {
        let p = params(2e-4, 4, 25.0);
        let mut prev = roc_point(0.0, &p);
        for i in 1..2000 {
            let r = roc_point(i as f64 * 0.5, &p);
            assert!(r.fpr >= prev.fpr && r.tpr >= prev.tpr);
            assert!((tpr_from_fpr(r.fpr, &p).unwrap() - r.tpr).abs() < 1e-9);
            prev = r;
        }
    }

    #[test]
    fn cost_limits() {
        let p = params(1e-5, 8, 25.0);
        let c = CostParams::new(10.0, 1e5).unwrap();
        assert_eq!(cost(0.0, &p, &c), 10.0);
        assert_relative_eq!(cost(1e9, &p, &c), 1e5, max_relative = 1e-9);
    }

    #[test]
    fn derivative_single_crossing() {
        let p = params(1e-5, 8, 25.0);
        let c = CostParams::new(10.0, 1e5).unwrap();
        assert_eq!(derivative_sign_changes(&p, &c, 20.0 * 25.0, 100_000), 1);
    }

    #[test]
    fn closed_form_when_b_equals_a() {
        let p = params(1e-5, 8, 25.0);
        let a = 2.0 * 10.0 / (25.0 * SQRT_2PI);
        let c = CostParams::new(10.0, a / p.beta()).unwrap();
        let eps = optimal_threshold_closed_form(&p, &c).unwrap();
        let expect = 2.0 * 25.0 * 25.0 * p.beta();
        assert_relative_eq!(eps, expect, max_relative = 1e-9);
    }

    #[test]
    fn closed_form_regression_constant() {
        // frozen from scipy bounded minimisation of J (xatol 1e-10)
        let p = params(1.0 / 3.2e6, 8, 3.0);
        let c = CostParams::new(10.0, 1e5).unwrap();
        let eps = optimal_threshold_closed_form(&p, &c).unwrap();
        assert!((eps - 10.836_072_587).abs() < 1e-6, "eps {eps}");
        let grid = optimal_threshold_grid(&p, &c, 60.0, 2000).unwrap();
        assert!((grid - eps).abs() / eps < 0.01);
    }

    #[test]
    fn closed_form_regime_error() {
        let p = params(1e-2, 1, 25.0);
        let c = CostParams::new(1.0, 1e5).unwrap();
        assert!(matches!(optimal_threshold_closed_form(&p, &c), Err(Error::Regime { .. })));
    }

    #[test]
    fn floored_rate_gives_finite_threshold() {
        let p = params(0.0, 8, 3.0);
        assert_eq!(p.effective_rate(), DEFAULT_LAMBDA_FLOOR_PER_NS);
        let c = CostParams::new(10.0, 1e5).unwrap();
        let cf = optimal_threshold_closed_form(&p, &c).unwrap();
        let grid = optimal_threshold_grid(&p, &c, 60.0, 2000).unwrap();
        assert!(cf.is_finite() && cf > 0.0);
        assert!((grid - cf).abs() / cf < 0.01);
    }

    #[test]
    fn grid_preconditions() {
        let p = params(1e-5, 8, 3.0);
        let c = CostParams::new(10.0, 1e5).unwrap();
        assert!(optimal_threshold_grid(&p, &c, 60.0, 999).is_err());
        assert!(optimal_threshold_grid(&p, &c, 59.0, 2000).is_err());
    }

    #[test]
    fn param_validation() {
        assert!(HypothesisParams::new(-1.0, 8, 3.0).is_err());
        assert!(HypothesisParams::new(1e-5, 0, 3.0).is_err());
        assert!(HypothesisParams::new(1e-5, 8, 0.0).is_err());
        assert!(HypothesisParams::with_floor(1e-5, 8, 3.0, 0.0).is_err());
        assert!(CostParams::new(0.0, 1.0).is_err());
        assert!(CostParams::new(1.0, -1.0).is_err());
    }
}
