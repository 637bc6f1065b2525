//! Multi-seed experiments, the built-in presets, and the worked-example
//! replays.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::didie::{DidieConfig, DidieDetector, Verdict, VerdictRecord};
use crate::error::{config, Result};
use crate::metrics::{compute_metrics, DetectorMetrics, MetricsSummary};
use crate::model::{FlowArrival, FlowKey, GroundTruth, ServerId};
use crate::netsim::{
    invariants, run, DetectorConfig, DetectorKind, IncastSpec, PortId, RegularSpec, SimConfig,
    SimOutput, Topology, TraceEvent, TraceKind, TrafficSpec,
};
use crate::sampling::mean_interarrival_from_load;
use crate::time::TimeNs;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default)]
    pub trace_path: Option<String>,
    #[serde(default)]
    pub summary_path: Option<String>,
}

/// A simulation repeated over several seeds. Seeds come from an explicit
/// list, or count up from `base_seed` (default: the simulation's own seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub sim: SimConfig,
    #[serde(default)]
    pub repeats: Option<u32>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub base_seed: Option<u64>,
    #[serde(default)]
    pub outputs: Outputs,
}

impl ExperimentConfig {
    pub fn single(name: &str, sim: SimConfig) -> Self {
        ExperimentConfig {
            name: Some(name.to_string()),
            sim,
            repeats: None,
            seeds: None,
            base_seed: None,
            outputs: Outputs::default(),
        }
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        match (&self.seeds, self.base_seed) {
            (Some(_), Some(_)) => Err(config("give either `seeds` or `base_seed`, not both")),
            (Some(list), None) => {
                if list.is_empty() {
                    return Err(config("seed list is empty"));
                }
                if let Some(r) = self.repeats {
                    if r as usize != list.len() {
                        return Err(config(format!(
                            "repeats = {r} but {} seeds are listed",
                            list.len()
                        )));
                    }
                }
                Ok(list.clone())
            }
            (None, base) => {
                let n = self.repeats.unwrap_or(1);
                if n == 0 {
                    return Err(config("repeats must be >= 1"));
                }
                let base = base.unwrap_or(self.sim.seed);
                Ok((0..n as u64).map(|i| base.wrapping_add(i)).collect())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.seeds()?;
        self.sim.validate()
    }
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: MetricsSummary,
    /// Present when the caller asked to keep traces.
    pub output: Option<SimOutput>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub name: String,
    pub runs: Vec<SeedRun>,
    pub pooled: MetricsSummary,
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<(MetricsSummary, SimOutput)> {
    let sim = SimConfig { seed, ..cfg.sim.clone() };
    let out = run(&sim)?;
    invariants::check_all(&out.trace, &sim.topology)?;
    let metrics = compute_metrics(&out.trace, &out.flows, &sim.detectors)?;
    Ok((metrics, out))
}

/// Runs every seed (concurrently), checks the simulator invariants on each
/// trace and pools the metrics. Results are ordered by seed position.
pub fn run_experiment(cfg: &ExperimentConfig, keep_traces: bool) -> Result<ExperimentResult> {
    cfg.validate()?;
    let seeds = cfg.seeds()?;
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let (metrics, out) = run_seed(cfg, seed)?;
            Ok(SeedRun { seed, metrics, output: keep_traces.then_some(out) })
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled = pool_runs(&runs)?;
    Ok(ExperimentResult { name: cfg.name.clone().unwrap_or_else(|| "experiment".into()), runs, pooled })
}

/// Like [`run_experiment`], but runs the seeds one after another and hands
/// each output to `sink` before dropping it, so only one trace is held in
/// memory at a time.
pub fn run_experiment_with<F>(cfg: &ExperimentConfig, mut sink: F) -> Result<ExperimentResult>
where
    F: FnMut(u64, &MetricsSummary, &SimOutput) -> Result<()>,
{
    cfg.validate()?;
    let mut runs = Vec::new();
    for seed in cfg.seeds()? {
        let (metrics, out) = run_seed(cfg, seed)?;
        sink(seed, &metrics, &out)?;
        runs.push(SeedRun { seed, metrics, output: None });
    }
    let pooled = pool_runs(&runs)?;
    Ok(ExperimentResult { name: cfg.name.clone().unwrap_or_else(|| "experiment".into()), runs, pooled })
}

/// Pools per-seed summaries of the same detector set.
pub fn pool_summaries(parts: &[MetricsSummary]) -> Result<MetricsSummary> {
    let first = parts.first().ok_or_else(|| config("nothing to pool"))?;
    let mut detectors = Vec::new();
    for i in 0..first.detectors.len() {
        let column: Vec<DetectorMetrics> = parts
            .iter()
            .map(|p| p.detectors.get(i).cloned().ok_or_else(|| config("detector sets differ")))
            .collect::<Result<_>>()?;
        detectors.push(DetectorMetrics::pool(&column)?);
    }
    Ok(MetricsSummary { flows: parts.iter().map(|p| p.flows).sum(), detectors })
}

fn pool_runs(runs: &[SeedRun]) -> Result<MetricsSummary> {
    let summaries: Vec<MetricsSummary> = runs.iter().map(|r| r.metrics.clone()).collect();
    pool_summaries(&summaries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Table3IncastOnly,
    Table4Mixed,
}

impl FromStr for Preset {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table3-incast-only" => Ok(Preset::Table3IncastOnly),
            "table4-mixed" => Ok(Preset::Table4Mixed),
            _ => Err(config(format!(
                "unknown preset `{s}` (expected table3-incast-only or table4-mixed)"
            ))),
        }
    }
}

pub const INCAST_FLOW_BYTES: u64 = 47_000;
pub const INCAST_OFFSET_SIGMA_NS: f64 = 3.0;
pub const DIDIE_EPSILON_NS: f64 = 14.0;
pub const GRADIENT_WINDOW_NS: f64 = 17_600.0;
/// Ideal arrival of the single incast in the incast-only preset.
pub const TABLE3_INCAST_START_NS: f64 = 100_000.0;
pub const TABLE4_SEEDS: u32 = 10;
pub const TABLE4_DURATION_NS: f64 = 1e9;
pub const TABLE4_INCAST_LOAD: f64 = 0.025;

fn didie_fixed() -> DetectorConfig {
    DetectorConfig::Didie(DidieConfig { epsilon_ns: DIDIE_EPSILON_NS, ..DidieConfig::default() })
}

/// One run per fan-in (2, 3, 4): a single incast from servers `0..N` to
/// the first right-hand server, no regular traffic.
pub fn table3_incast_only() -> Vec<ExperimentConfig> {
    let topo = Topology::dumbbell(4, 4);
    (2..=4)
        .map(|n| {
            let traffic = TrafficSpec {
                regular: None,
                incast: Some(IncastSpec {
                    schedule_ns: Some(vec![TABLE3_INCAST_START_NS]),
                    lambda_n1_per_ns: None,
                    fan_in: n,
                    sigma_offset_ns: INCAST_OFFSET_SIGMA_NS,
                    flow_size_bytes: INCAST_FLOW_BYTES,
                    senders: Some((0..n).collect()),
                    receivers: Some(vec![topo.n_left]),
                }),
            };
            let mut sim = SimConfig::new(topo.clone(), traffic, 2e6);
            sim.seed = 1;
            sim.detectors = vec![
                didie_fixed(),
                DetectorConfig::Qlen { threshold_bytes: 10_000 },
                DetectorConfig::Qgrad { window_ns: GRADIENT_WINDOW_NS, threshold_bits_per_s: 2e9 },
            ];
            ExperimentConfig::single(&format!("{n}-to-1"), sim)
        })
        .collect()
}

/// Mixed traffic: 4-to-1 incasts at 2.5% sender load from the left servers
/// to a random right server, over background traffic drawn from the
/// bundled size distribution at `load`. `low` selects the lower baseline
/// thresholds (5 KB, 1 Gb/s) instead of (10 KB, 3 Gb/s).
pub fn table4_mixed(load: f64, low: bool) -> Result<ExperimentConfig> {
    let topo = Topology::dumbbell(4, 4);
    let incast_gap = mean_interarrival_from_load(
        INCAST_FLOW_BYTES as f64 * 8.0,
        topo.link_rate_bps,
        TABLE4_INCAST_LOAD,
    )?;
    let traffic = TrafficSpec {
        regular: Some(RegularSpec { load_fraction: Some(load), ..RegularSpec::default() }),
        incast: Some(IncastSpec {
            schedule_ns: None,
            lambda_n1_per_ns: Some(1.0 / incast_gap),
            fan_in: 4,
            sigma_offset_ns: INCAST_OFFSET_SIGMA_NS,
            flow_size_bytes: INCAST_FLOW_BYTES,
            senders: Some(topo.left_servers()),
            receivers: Some(topo.right_servers()),
        }),
    };
    let (qlen, qgrad) = if low { (5_000, 1e9) } else { (10_000, 3e9) };
    let mut sim = SimConfig::new(topo, traffic, TABLE4_DURATION_NS);
    sim.detectors = vec![
        didie_fixed(),
        DetectorConfig::Qlen { threshold_bytes: qlen },
        DetectorConfig::Qgrad { window_ns: GRADIENT_WINDOW_NS, threshold_bits_per_s: qgrad },
    ];
    let mut cfg = ExperimentConfig::single(
        &format!("load{:.0}-{}", load * 100.0, if low { "low" } else { "high" }),
        sim,
    );
    cfg.base_seed = Some(1);
    cfg.repeats = Some(TABLE4_SEEDS);
    Ok(cfg)
}

impl Preset {
    pub fn experiments(self) -> Result<Vec<ExperimentConfig>> {
        match self {
            Preset::Table3IncastOnly => Ok(table3_incast_only()),
            Preset::Table4Mixed => {
                let mut v = Vec::new();
                for load in [0.6, 0.3] {
                    for low in [false, true] {
                        v.push(table4_mixed(load, low)?);
                    }
                }
                Ok(v)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    Table1,
    Table2,
}

impl FromStr for Fixture {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Fixture::Table1),
            "table2" => Ok(Fixture::Table2),
            _ => Err(config(format!("unknown fixture `{s}` (expected table1 or table2)"))),
        }
    }
}

pub const REPLAY_EPSILON_NS: f64 = 20.0;
pub const REPLAY_CARD_I: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureRow {
    pub t_ns: f64,
    /// 1-based server labels, as printed (`S1` is server 0).
    pub sip: usize,
    pub dip: usize,
    pub is_incast: bool,
    pub expected: Verdict,
    pub expected_revised: bool,
}

const fn row(t_ns: f64, dip: usize, sip: usize, is_incast: bool, expected: Verdict, expected_revised: bool) -> FixtureRow {
    FixtureRow { t_ns, sip, dip, is_incast, expected, expected_revised }
}

const R: Verdict = Verdict::Regular;
const I: Verdict = Verdict::Incast;

const TABLE1: [FixtureRow; 6] = [
    row(940.0, 7, 1, false, R, false),
    row(950.0, 6, 4, false, R, false),
    row(1000.0, 5, 1, true, I, true),
    row(1000.0, 5, 2, true, I, false),
    row(1012.0, 5, 3, true, I, false),
    row(1015.0, 5, 4, true, I, false),
];

const TABLE2: [FixtureRow; 6] = [
    row(950.0, 7, 3, false, R, false),
    row(980.0, 5, 3, false, I, true),
    row(1000.0, 5, 1, true, I, false),
    row(1012.0, 5, 2, true, I, false),
    row(1015.0, 5, 3, true, I, false),
    row(1030.0, 5, 4, false, I, false),
];

impl Fixture {
    pub fn rows(self) -> &'static [FixtureRow] {
        match self {
            Fixture::Table1 => &TABLE1,
            Fixture::Table2 => &TABLE2,
        }
    }

    /// Fixture rows as flows with ground truth; incast rows form one incast
    /// whose ideal arrival is its first row.
    pub fn flows(self) -> Result<Vec<FlowArrival>> {
        let rows = self.rows();
        let incast: Vec<&FixtureRow> = rows.iter().filter(|r| r.is_incast).collect();
        let ideal = incast.first().map(|r| r.t_ns).unwrap_or(0.0);
        let mut j = 0;
        let mut regular = 0;
        rows.iter()
            .enumerate()
            .map(|(k, r)| {
                let key = FlowKey::new(k as u64, r.sip - 1, r.dip - 1)?;
                let truth = if r.is_incast {
                    j += 1;
                    GroundTruth::Incast {
                        traffic_index: 0,
                        flow_index: j,
                        flow_count: incast.len() as u32,
                        ideal_arrival: TimeNs::new(ideal)?,
                    }
                } else {
                    regular += 1;
                    GroundTruth::Regular { traffic_index: regular - 1 }
                };
                Ok(FlowArrival { key, t_arrival: TimeNs::new(r.t_ns)?, size_bytes: 1, truth })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRow {
    pub k: usize,
    pub t_ns: f64,
    pub dt_ns: Option<f64>,
    pub sip: ServerId,
    pub dip: ServerId,
    pub verdict: Verdict,
    pub revised: bool,
    pub expected: Verdict,
    pub expected_revised: bool,
}

impl ReplayRow {
    pub fn matches(&self) -> bool {
        self.verdict == self.expected && self.revised == self.expected_revised
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub rows: Vec<ReplayRow>,
    pub flows: Vec<FlowArrival>,
    /// Verdict events as a detector on one port would emit them.
    pub trace: Vec<TraceEvent>,
}

impl ReplayOutcome {
    pub fn matches(&self) -> bool {
        self.rows.iter().all(ReplayRow::matches)
    }

    pub fn metrics(&self) -> Result<MetricsSummary> {
        let det = DetectorConfig::Didie(replay_config());
        compute_metrics(&self.trace, &self.flows, &[det])
    }
}

pub fn replay_config() -> DidieConfig {
    DidieConfig::fixed(REPLAY_EPSILON_NS, REPLAY_CARD_I)
}

/// Feeds a fixture through a fixed-threshold detector.
pub fn replay(fixture: Fixture) -> Result<ReplayOutcome> {
    let flows = fixture.flows()?;
    let mut det = DidieDetector::new(replay_config())?;
    let port = PortId::Trunk { from: 0 };
    let mut records: Vec<VerdictRecord> = Vec::new();
    let mut trace = Vec::new();
    let mut push = |t: TimeNs, key: FlowKey, v: Verdict, revised: bool| {
        let mut e = TraceEvent::new(t, trace.len() as u64, TraceKind::Verdict, port);
        e.flow_id = Some(key.flow_id);
        e.sip = Some(key.sip);
        e.dip = Some(key.dip);
        e.detector = Some(DetectorKind::Didie);
        e.verdict = Some(v);
        e.revised = Some(revised);
        trace.push(e);
    };
    for f in &flows {
        let obs = det.observe(f)?;
        push(f.t_arrival, f.key, obs.verdict.verdict, false);
        if let Some(b) = obs.backfill {
            push(b.revision_time, b.flow, Verdict::Incast, true);
            let prev = records
                .iter_mut()
                .rev()
                .find(|r| r.flow == b.flow)
                .ok_or_else(|| config("backfill of an unknown flow"))?;
            prev.apply(&b)?;
        }
        records.push(obs.verdict);
    }
    let rows = fixture.rows();
    let out_rows = records
        .iter()
        .enumerate()
        .map(|(k, r)| ReplayRow {
            k: k + 1,
            t_ns: r.decided_at.ns(),
            dt_ns: (k > 0).then(|| r.decided_at.since(records[k - 1].decided_at)),
            sip: r.flow.sip,
            dip: r.flow.dip,
            verdict: r.verdict,
            revised: r.revised,
            expected: rows[k].expected,
            expected_revised: rows[k].expected_revised,
        })
        .collect();
    Ok(ReplayOutcome { rows: out_rows, flows, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_plans() {
        let mut cfg = table3_incast_only().remove(0);
        assert_eq!(cfg.seeds().unwrap(), vec![1]);
        cfg.repeats = Some(3);
        cfg.base_seed = Some(10);
        assert_eq!(cfg.seeds().unwrap(), vec![10, 11, 12]);
        cfg.seeds = Some(vec![4, 5]);
        assert!(cfg.seeds().is_err());
        cfg.base_seed = None;
        assert!(cfg.seeds().is_err());
        cfg.repeats = Some(2);
        assert_eq!(cfg.seeds().unwrap(), vec![4, 5]);
        cfg.repeats = Some(0);
        cfg.seeds = None;
        assert!(cfg.seeds().is_err());
    }

    #[test]
    fn presets_validate() {
        for p in [Preset::Table3IncastOnly, Preset::Table4Mixed] {
            for e in p.experiments().unwrap() {
                e.validate().unwrap();
            }
        }
        assert!("table5".parse::<Preset>().is_err());
    }

    #[test]
    fn mixed_rates() {
        let cfg = table4_mixed(0.3, false).unwrap();
        let regular = cfg.sim.traffic.regular.as_ref().unwrap();
        let rate = regular.rate_per_ns(&cfg.sim.topology).unwrap();
        assert!((1.0 / rate - 3.2e6).abs() < 1e-3);
        let incast = cfg.sim.traffic.incast.as_ref().unwrap();
        let gap = 1.0 / incast.lambda_n1_per_ns.unwrap();
        assert!((gap - 1.504e7).abs() < 1e-3);
    }

    #[test]
    fn table2_metrics() {
        let out = replay(Fixture::Table2).unwrap();
        assert!(out.matches());
        let m = out.metrics().unwrap();
        let d = &m.detectors[0];
        assert_eq!(d.tpr, Some(1.0));
        assert_eq!(d.fpr, Some(2.0 / 3.0));
    }

    #[test]
    fn fixture_names() {
        assert_eq!("table1".parse::<Fixture>().unwrap(), Fixture::Table1);
        assert!("table3".parse::<Fixture>().is_err());
    }
}
