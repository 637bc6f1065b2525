//! Online per-port incast detector.
//!
//! Each flow is classified on its first packet: incast iff it arrived within
//! `epsilon` of the previous flow on the port and shares that flow's DIP.
//! When a flow is classified incast right after a regular verdict, the
//! previous flow is the leading flow of the incast and gets revised to
//! incast as well. The regular-flow rate and the offset variance are learned
//! with EWMAs and, with `auto_threshold`, feed the closed-form optimum.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::hypothesis::{
    optimal_threshold_closed_form, optimal_threshold_grid, CostParams, HypothesisParams,
    DEFAULT_LAMBDA_FLOOR_PER_NS,
};
use crate::model::{FlowArrival, FlowKey, ServerId};
use crate::time::TimeNs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DidieConfig {
    pub epsilon_ns: f64,
    pub auto_threshold: bool,
    pub c_fn: f64,
    pub c_fp: f64,
    /// `|I|`. `None` means "take it from the topology".
    pub card_i: Option<u32>,
    pub alpha: f64,
    pub lambda_init_per_ns: f64,
    pub sigma_init_ns: f64,
    pub lambda_floor_per_ns: f64,
    pub use_reciprocal_rate_ewma: bool,
}

impl Default for DidieConfig {
    fn default() -> Self {
        DidieConfig {
            epsilon_ns: 14.0,
            auto_threshold: false,
            c_fn: 10.0,
            c_fp: 1e5,
            card_i: None,
            alpha: 0.1,
            lambda_init_per_ns: 0.0,
            sigma_init_ns: 3.0,
            lambda_floor_per_ns: DEFAULT_LAMBDA_FLOOR_PER_NS,
            use_reciprocal_rate_ewma: true,
        }
    }
}

impl DidieConfig {
    pub fn fixed(epsilon_ns: f64, card_i: u32) -> Self {
        DidieConfig { epsilon_ns, card_i: Some(card_i), ..Default::default() }
    }

    pub fn cost(&self) -> CostParams {
        CostParams { c_fn: self.c_fn, c_fp: self.c_fp }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(param(format!("EWMA weight alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !self.auto_threshold && !(self.epsilon_ns.is_finite() && self.epsilon_ns > 0.0) {
            return Err(param(format!("epsilon must be > 0, got {}", self.epsilon_ns)));
        }
        if let Some(card) = self.card_i {
            if card < 2 {
                return Err(param(format!("|I| must be >= 2, got {card}")));
            }
        }
        if !(self.lambda_init_per_ns.is_finite() && self.lambda_init_per_ns >= 0.0) {
            return Err(param("initial lambda must be >= 0"));
        }
        if !(self.sigma_init_ns.is_finite() && self.sigma_init_ns > 0.0) {
            return Err(param("initial sigma must be > 0"));
        }
        if !(self.lambda_floor_per_ns.is_finite() && self.lambda_floor_per_ns > 0.0) {
            return Err(param("lambda floor must be > 0"));
        }
        if self.auto_threshold {
            self.cost().validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Regular,
    Incast,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Regular => "regular",
            Verdict::Incast => "incast",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub flow: FlowKey,
    pub verdict: Verdict,
    pub decided_at: TimeNs,
    pub revised: bool,
    pub revision_time: Option<TimeNs>,
}

impl VerdictRecord {
    /// Applies a backfill. Only regular verdicts can be revised.
    pub fn apply(&mut self, b: &Backfill) -> Result<()> {
        if b.flow != self.flow {
            return Err(param("backfill targets a different flow"));
        }
        if self.verdict == Verdict::Incast {
            return Err(param(format!("flow {} is already incast", self.flow.flow_id)));
        }
        if b.revision_time < self.decided_at {
            return Err(Error::Ordering { prev: self.decided_at.ns(), got: b.revision_time.ns() });
        }
        self.verdict = Verdict::Incast;
        self.revised = true;
        self.revision_time = Some(b.revision_time);
        Ok(())
    }

    /// Time at which the flow was first known to be incast.
    pub fn incast_since(&self) -> Option<TimeNs> {
        match (self.verdict, self.revision_time) {
            (Verdict::Incast, Some(t)) => Some(t),
            (Verdict::Incast, None) => Some(self.decided_at),
            _ => None,
        }
    }
}

/// Reclassification of the previous flow as the leading flow of an incast.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Backfill {
    pub flow: FlowKey,
    pub revision_time: TimeNs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub verdict: VerdictRecord,
    pub backfill: Option<Backfill>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LastFlow {
    pub key: FlowKey,
    pub t: TimeNs,
    pub dip: ServerId,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncastRun {
    pub lead_time: TimeNs,
    pub arrivals: Vec<TimeNs>,
    pub dip: ServerId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DidieState {
    pub last_flow: Option<LastFlow>,
    pub lambda_ewma_per_ns: f64,
    /// EWMA of regular inter-arrival times, used by the reciprocal estimator.
    pub interval_ewma_ns: Option<f64>,
    pub sigma2_ewma_ns2: f64,
    pub current_epsilon_ns: f64,
    pub incast_run: Option<IncastRun>,
}

/// Unbiased run variance around the leading arrival:
/// `sum_j (t_j - t_1)^2 / (n - 1)`, the lead contributing a zero term.
pub fn variance_estimate(run_arrivals: &[TimeNs], lead: TimeNs) -> Result<f64> {
    let n = run_arrivals.len();
    if n < 2 {
        return Err(Error::InsufficientData { need: 2, got: n });
    }
    let mut acc = 0.0;
    for t in run_arrivals {
        let d = t.since(lead);
        if d < 0.0 {
            return Err(param("run arrival precedes the leading flow"));
        }
        acc += d * d;
    }
    Ok(acc / (n - 1) as f64)
}

#[derive(Debug, Clone)]
pub struct DidieDetector {
    config: DidieConfig,
    card_i: u32,
    state: DidieState,
}

impl DidieDetector {
    pub fn new(config: DidieConfig) -> Result<Self> {
        config.validate()?;
        let card_i = config
            .card_i
            .ok_or_else(|| param("detector needs |I| (card_i)"))?;
        let interval_ewma_ns =
            (config.lambda_init_per_ns > 0.0).then(|| 1.0 / config.lambda_init_per_ns);
        let state = DidieState {
            last_flow: None,
            lambda_ewma_per_ns: config.lambda_init_per_ns,
            interval_ewma_ns,
            sigma2_ewma_ns2: config.sigma_init_ns * config.sigma_init_ns,
            current_epsilon_ns: config.epsilon_ns,
            incast_run: None,
        };
        let mut det = DidieDetector { config, card_i, state };
        if det.config.auto_threshold {
            det.recompute_threshold();
        }
        Ok(det)
    }

    pub fn config(&self) -> &DidieConfig {
        &self.config
    }

    pub fn state(&self) -> &DidieState {
        &self.state
    }

    pub fn epsilon_ns(&self) -> f64 {
        self.state.current_epsilon_ns
    }

    pub fn observe(&mut self, arrival: &FlowArrival) -> Result<Observation> {
        self.observe_flow_start(arrival.key, arrival.t_arrival)
    }

    pub fn observe_flow_start(&mut self, key: FlowKey, t: TimeNs) -> Result<Observation> {
        let prev = self.state.last_flow;
        if let Some(last) = prev {
            if t < last.t {
                return Err(Error::Ordering { prev: last.t.ns(), got: t.ns() });
            }
        }

        let verdict = match prev {
            Some(last) if t.since(last.t) <= self.state.current_epsilon_ns && key.dip == last.dip => {
                Verdict::Incast
            }
            _ => Verdict::Regular,
        };

        let mut backfill = None;
        let mut params_changed = false;
        match verdict {
            Verdict::Incast => {
                let last = prev.expect("incast verdict needs a predecessor");
                if last.verdict == Verdict::Regular {
                    backfill = Some(Backfill { flow: last.key, revision_time: t });
                }
                match self.state.incast_run.as_mut() {
                    Some(run) => run.arrivals.push(t),
                    None => {
                        self.state.incast_run = Some(IncastRun {
                            lead_time: last.t,
                            arrivals: vec![last.t, t],
                            dip: key.dip,
                        })
                    }
                }
            }
            Verdict::Regular => {
                if let Some(run) = self.state.incast_run.take() {
                    if run.arrivals.len() >= 2 {
                        let v = variance_estimate(&run.arrivals, run.lead_time)?;
                        self.update_sigma_ewma(v);
                        params_changed = true;
                    }
                }
                if let Some(last) = prev {
                    let dt = t.since(last.t);
                    // only regular-to-regular gaps describe the regular process
                    if last.verdict == Verdict::Regular && dt > 0.0 {
                        self.update_lambda_ewma(dt)?;
                        params_changed = true;
                    }
                }
            }
        }

        // the revised predecessor counts as incast for the next comparison
        self.state.last_flow = Some(LastFlow { key, t, dip: key.dip, verdict });
        if params_changed && self.config.auto_threshold {
            self.recompute_threshold();
        }

        Ok(Observation {
            verdict: VerdictRecord {
                flow: key,
                verdict,
                decided_at: t,
                revised: false,
                revision_time: None,
            },
            backfill,
        })
    }

    pub fn update_lambda_ewma(&mut self, dt_regular_ns: f64) -> Result<f64> {
        if !(dt_regular_ns.is_finite() && dt_regular_ns > 0.0) {
            return Err(param(format!("regular interval must be > 0, got {dt_regular_ns}")));
        }
        let a = self.config.alpha;
        if self.config.use_reciprocal_rate_ewma {
            let observed = 1.0 / dt_regular_ns;
            self.state.lambda_ewma_per_ns = a * observed + (1.0 - a) * self.state.lambda_ewma_per_ns;
        } else {
            let mean = match self.state.interval_ewma_ns {
                Some(prev) => a * dt_regular_ns + (1.0 - a) * prev,
                None => dt_regular_ns,
            };
            self.state.interval_ewma_ns = Some(mean);
            self.state.lambda_ewma_per_ns = 1.0 / mean;
        }
        Ok(self.state.lambda_ewma_per_ns)
    }

    pub fn update_sigma_ewma(&mut self, run_variance_ns2: f64) -> f64 {
        let a = self.config.alpha;
        self.state.sigma2_ewma_ns2 = a * run_variance_ns2.max(0.0) + (1.0 - a) * self.state.sigma2_ewma_ns2;
        self.state.sigma2_ewma_ns2
    }

    /// Re-derives epsilon from the learned parameters. Keeps the current value
    /// when the learned parameters are degenerate (e.g. zero variance).
    pub fn recompute_threshold(&mut self) -> f64 {
        if !self.config.auto_threshold {
            return self.state.current_epsilon_ns;
        }
        let sigma = self.state.sigma2_ewma_ns2.sqrt();
        let Ok(p) = HypothesisParams::with_floor(
            self.state.lambda_ewma_per_ns,
            self.card_i,
            sigma,
            self.config.lambda_floor_per_ns,
        ) else {
            return self.state.current_epsilon_ns;
        };
        let c = self.config.cost();
        let eps = match optimal_threshold_closed_form(&p, &c) {
            Ok(eps) => eps,
            Err(_) => {
                let upper = 20.0 * sigma + 3.0 * sigma * sigma * p.beta();
                optimal_threshold_grid(&p, &c, upper, 2000).unwrap_or(self.state.current_epsilon_ns)
            }
        };
        if eps.is_finite() && eps > 0.0 {
            self.state.current_epsilon_ns = eps;
        }
        self.state.current_epsilon_ns
    }
}
