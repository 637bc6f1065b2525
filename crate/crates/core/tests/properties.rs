use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use incastlab_core::didie::{DidieConfig, DidieDetector, Verdict};
use incastlab_core::hypothesis::{
    derivative_sign_changes, likelihood_ratio, optimal_threshold_closed_form, optimal_threshold_grid,
    roc_point, tpr_from_fpr, CostParams, HypothesisParams,
};
use incastlab_core::model::FlowKey;
use incastlab_core::TimeNs;

/// `(sigma, |I|, sigma * lambda / |I|)` inside the small-offset regime.
fn regime() -> impl Strategy<Value = HypothesisParams> {
    regime_below(1e-2)
}

fn regime_below(limit: f64) -> impl Strategy<Value = HypothesisParams> {
    (0.5f64..100.0, 2u32..64, -16.0f64..limit.ln()).prop_map(|(sigma, card, ln_regime)| {
        let lambda = ln_regime.exp() * card as f64 / sigma;
        HypothesisParams::new(lambda, card, sigma).unwrap()
    })
}

fn costs() -> impl Strategy<Value = CostParams> {
    (0.0f64..7.0, 0.0f64..16.0)
        .prop_map(|(a, b)| CostParams::new(a.exp(), b.exp()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn likelihood_ratio_decreases_past_its_peak(p in regime()) {
        let peak = p.sigma_ns * p.sigma_ns * p.beta();
        let mut prev = likelihood_ratio(peak, &p).unwrap();
        for i in 1..=10_000 {
            let eps = peak + (10.0 * p.sigma_ns - peak) * i as f64 / 10_000.0;
            let lr = likelihood_ratio(eps, &p).unwrap();
            prop_assert!(lr < prev);
            prev = lr;
        }
    }

    // with sigma * beta < 5e-4 the rise on [0, sigma^2 beta] is shorter
    // than one grid step of sigma / 1000
    #[test]
    fn likelihood_ratio_is_monotone_on_the_full_grid_for_small_rates(p in regime_below(5e-4)) {
        let mut prev = f64::INFINITY;
        for i in 0..10_000 {
            let lr = likelihood_ratio(10.0 * p.sigma_ns * i as f64 / 9_999.0, &p).unwrap();
            prop_assert!(lr < prev);
            prev = lr;
        }
    }

    #[test]
    fn roc_is_monotone_and_self_consistent(p in regime()) {
        let mut last = roc_point(0.0, &p);
        for i in 1..200 {
            let pt = roc_point(p.sigma_ns * 0.1 * i as f64, &p);
            prop_assert!(pt.fpr >= last.fpr && pt.tpr >= last.tpr);
            prop_assert!((tpr_from_fpr(pt.fpr, &p).unwrap() - pt.tpr).abs() <= 1e-9);
            last = pt;
        }
    }

    #[test]
    fn lower_rates_dominate_at_equal_fpr(p in regime(), shrink in 1.5f64..100.0, fpr in 1e-6f64..0.5) {
        let q = HypothesisParams::new(p.lambda11_per_ns / shrink, p.card_i, p.sigma_ns).unwrap();
        let (lo, hi) = (tpr_from_fpr(fpr, &p).unwrap(), tpr_from_fpr(fpr, &q).unwrap());
        // strict until both curves saturate at tpr = 1
        prop_assert!(hi > lo || (lo == 1.0 && hi == 1.0), "{hi} vs {lo}");
    }

    #[test]
    fn closed_form_matches_grid_and_is_the_unique_optimum(p in regime(), c in costs()) {
        if let Ok(closed) = optimal_threshold_closed_form(&p, &c) {
            let grid = optimal_threshold_grid(&p, &c, 20.0 * p.sigma_ns, 1000).unwrap();
            prop_assert!((grid - closed).abs() / closed <= 0.01);
            prop_assert_eq!(derivative_sign_changes(&p, &c, 20.0 * p.sigma_ns, 20_000), 1);
        }
    }
}

#[test]
fn detector_rates_on_synthetic_streams_match_the_roc() {
    let (card, lambda, sigma, eps) = (4u32, 0.02, 15.0, 20.0);
    let p = HypothesisParams::new(lambda, card, sigma).unwrap();
    let analytic = roc_point(eps, &p);
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);

    // H0: consecutive same-DIP flows with exponential gaps of rate lambda/|I|
    let gaps = Exp::new(p.beta()).unwrap();
    let mut det = DidieDetector::new(DidieConfig::fixed(eps, card)).unwrap();
    let mut t = 0.0;
    let mut flagged = 0;
    for k in 0..n {
        t += gaps.sample(&mut rng);
        let key = FlowKey::new(k, 1 + (k as usize % 3), 0).unwrap();
        if det.observe_flow_start(key, TimeNs::from_ns(t)).unwrap().verdict.verdict == Verdict::Incast {
            flagged += 1;
        }
    }
    let fpr = flagged as f64 / n as f64;
    assert!((fpr - analytic.fpr).abs() <= 0.01, "fpr {fpr} vs {}", analytic.fpr);

    // H1: a leading flow at t* and a follower at t* + |N(0, sigma)|, far
    // apart from every other pair
    let offset = Normal::new(0.0, sigma).unwrap();
    let mut det = DidieDetector::new(DidieConfig::fixed(eps, card)).unwrap();
    let mut hits = 0;
    for k in 0..n {
        let lead = 1e6 * (k + 1) as f64;
        let dip = (k % card as u64) as usize;
        let sip = (dip + 1) % card as usize;
        let key = FlowKey::new(2 * k, sip, dip).unwrap();
        det.observe_flow_start(key, TimeNs::from_ns(lead)).unwrap();
        let follower = FlowKey::new(2 * k + 1, (dip + 2) % card as usize, dip).unwrap();
        let t = lead + offset.sample(&mut rng).abs();
        if det.observe_flow_start(follower, TimeNs::from_ns(t)).unwrap().verdict.verdict
            == Verdict::Incast
        {
            hits += 1;
        }
    }
    let tpr = hits as f64 / n as f64;
    assert!((tpr - analytic.tpr).abs() <= 0.01, "tpr {tpr} vs {}", analytic.tpr);
}
