//! Scoring of detector output against generator ground truth.
//!
//! Rates are per flow. The detector flags a flow as incast at the earliest
//! of: an incast verdict for it (including a backfilled one, timed at the
//! revision), or, for the queue detectors, a detection on a port whose
//! buffer holds one of the flow's packets at that instant. An incast
//! counts as detected once any of its flows is flagged; its latency is the
//! flag time minus the ideal arrival time of the incast.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::didie::Verdict;
use crate::error::{config, Result};
use crate::model::{FlowArrival, GroundTruth};
use crate::netsim::{DetectorConfig, DetectorKind, PortId, TraceEvent, TraceKind};
use crate::time::TimeNs;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ns: Option<f64>,
    pub p50_ns: Option<f64>,
    pub p99_ns: Option<f64>,
    pub max_ns: Option<f64>,
}

impl LatencyStats {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |p: f64| {
            let k = (p * v.len() as f64).ceil() as usize;
            v[k.clamp(1, v.len()) - 1]
        };
        LatencyStats {
            mean_ns: Some(v.iter().sum::<f64>() / v.len() as f64),
            p50_ns: Some(rank(0.5)),
            p99_ns: Some(rank(0.99)),
            max_ns: v.last().copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorMetrics {
    pub detector: DetectorKind,
    /// In the detector's own unit: ns, bytes or bits/s.
    pub threshold: f64,
    pub incast_flows: u64,
    pub regular_flows: u64,
    pub true_positives: u64,
    pub false_positives: u64,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
    pub total_incasts: u64,
    pub detected_incasts: u64,
    pub latency: LatencyStats,
    /// Per detected incast, in ground-truth order.
    pub latencies_ns: Vec<f64>,
}

impl DetectorMetrics {
    fn from_counts(
        detector: DetectorKind,
        threshold: f64,
        counts: [u64; 4],
        total_incasts: u64,
        latencies_ns: Vec<f64>,
    ) -> Self {
        let [incast_flows, regular_flows, tp, fp] = counts;
        let tpr = (incast_flows > 0).then(|| tp as f64 / incast_flows as f64);
        DetectorMetrics {
            detector,
            threshold,
            incast_flows,
            regular_flows,
            true_positives: tp,
            false_positives: fp,
            tpr,
            fpr: (regular_flows > 0).then(|| fp as f64 / regular_flows as f64),
            fnr: tpr.map(|r| 1.0 - r),
            total_incasts,
            detected_incasts: latencies_ns.len() as u64,
            latency: LatencyStats::from_samples(&latencies_ns),
            latencies_ns,
        }
    }

    /// Pools runs of the same detector: counts add up, latencies concatenate.
    pub fn pool(parts: &[DetectorMetrics]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| config("nothing to pool"))?;
        if parts.iter().any(|p| p.detector != first.detector || p.threshold != first.threshold) {
            return Err(config("pooling different detector settings"));
        }
        let sum = |f: fn(&DetectorMetrics) -> u64| parts.iter().map(f).sum::<u64>();
        Ok(DetectorMetrics::from_counts(
            first.detector,
            first.threshold,
            [
                sum(|p| p.incast_flows),
                sum(|p| p.regular_flows),
                sum(|p| p.true_positives),
                sum(|p| p.false_positives),
            ],
            sum(|p| p.total_incasts),
            parts.iter().flat_map(|p| p.latencies_ns.iter().copied()).collect(),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub flows: u64,
    pub detectors: Vec<DetectorMetrics>,
}

impl MetricsSummary {
    pub fn get(&self, kind: DetectorKind) -> Option<&DetectorMetrics> {
        self.detectors.iter().find(|d| d.detector == kind)
    }
}

/// Earliest time each flow was flagged incast, per detector kind.
pub fn flag_times(trace: &[TraceEvent]) -> BTreeMap<DetectorKind, HashMap<u64, TimeNs>> {
    let mut flags: BTreeMap<DetectorKind, HashMap<u64, TimeNs>> = BTreeMap::new();
    let mut resident: HashMap<PortId, BTreeMap<u64, u32>> = HashMap::new();
    let mut mark = |d: DetectorKind, flow: u64, t: TimeNs| {
        let e = flags.entry(d).or_default().entry(flow).or_insert(t);
        *e = (*e).min(t);
    };
    for e in trace {
        match e.kind {
            TraceKind::Enqueue => {
                if let Some(f) = e.flow_id {
                    *resident.entry(e.port).or_default().entry(f).or_default() += 1;
                }
            }
            TraceKind::Dequeue => {
                if let (Some(f), Some(q)) = (e.flow_id, resident.get_mut(&e.port)) {
                    if let Some(n) = q.get_mut(&f) {
                        *n -= 1;
                        if *n == 0 {
                            q.remove(&f);
                        }
                    }
                }
            }
            TraceKind::Verdict => {
                if let (Some(d), Some(Verdict::Incast), Some(f)) = (e.detector, e.verdict, e.flow_id) {
                    mark(d, f, e.t);
                }
            }
            TraceKind::Detection => {
                if let (Some(d), Some(q)) = (e.detector, resident.get(&e.port)) {
                    for &f in q.keys() {
                        mark(d, f, e.t);
                    }
                }
            }
            TraceKind::FlowStart | TraceKind::Drop => {}
        }
    }
    flags
}

/// Scores every configured detector. `flows` is the ground truth of the
/// run that produced `trace`.
pub fn compute_metrics(
    trace: &[TraceEvent],
    flows: &[FlowArrival],
    detectors: &[DetectorConfig],
) -> Result<MetricsSummary> {
    if flows.is_empty() && trace.iter().any(|e| e.kind == TraceKind::FlowStart) {
        return Err(config("trace has flows but no ground truth was supplied"));
    }
    let known: HashMap<u64, &FlowArrival> = flows.iter().map(|f| (f.key.flow_id, f)).collect();
    if let Some(e) = trace.iter().find(|e| e.flow_id.is_some_and(|id| !known.contains_key(&id))) {
        return Err(config(format!("trace flow {:?} has no ground truth", e.flow_id)));
    }

    let flags = flag_times(trace);
    let empty = HashMap::new();
    let mut out = Vec::new();
    for det in detectors {
        let flagged = flags.get(&det.kind()).unwrap_or(&empty);
        let mut counts = [0u64; 4];
        // traffic index -> (ideal arrival, earliest flag)
        let mut incasts: BTreeMap<u64, (TimeNs, Option<TimeNs>)> = BTreeMap::new();
        for f in flows {
            let hit = flagged.get(&f.key.flow_id).copied();
            match f.truth {
                GroundTruth::Incast { traffic_index, ideal_arrival, .. } => {
                    counts[0] += 1;
                    counts[2] += u64::from(hit.is_some());
                    let slot = incasts.entry(traffic_index).or_insert((ideal_arrival, None));
                    slot.1 = match (slot.1, hit) {
                        (Some(a), Some(b)) => Some(a.min(b)),
                        (a, b) => a.or(b),
                    };
                }
                GroundTruth::Regular { .. } => {
                    counts[1] += 1;
                    counts[3] += u64::from(hit.is_some());
                }
            }
        }
        let latencies: Vec<f64> = incasts
            .values()
            .filter_map(|(ideal, hit)| hit.map(|t| t.since(*ideal)))
            .collect();
        out.push(DetectorMetrics::from_counts(
            det.kind(),
            det.threshold(),
            counts,
            incasts.len() as u64,
            latencies,
        ));
    }
    Ok(MetricsSummary { flows: flows.len() as u64, detectors: out })
}

pub const SUMMARY_CSV_HEADER: &str =
    "detector,threshold,tpr,fpr,fnr,mean_latency_ns,p99_latency_ns,detected,total";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row; undefined rates and latencies are left empty.
pub fn summary_csv_row(m: &DetectorMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        m.detector.as_str(),
        m.threshold,
        cell(m.tpr),
        cell(m.fpr),
        cell(m.fnr),
        cell(m.latency.mean_ns),
        cell(m.latency.p99_ns),
        m.detected_incasts,
        m.total_incasts
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::didie::DidieConfig;
    use crate::model::FlowKey;

    fn regular(id: u64, t: f64) -> FlowArrival {
        FlowArrival {
            key: FlowKey { flow_id: id, sip: 0, dip: 1 },
            t_arrival: TimeNs::from_ns(t),
            size_bytes: 1100,
            truth: GroundTruth::Regular { traffic_index: id },
        }
    }

    fn incast(id: u64, t: f64, j: u32) -> FlowArrival {
        FlowArrival {
            key: FlowKey { flow_id: id, sip: j as usize, dip: 7 },
            t_arrival: TimeNs::from_ns(t),
            size_bytes: 1100,
            truth: GroundTruth::Incast {
                traffic_index: 0,
                flow_index: j,
                flow_count: 2,
                ideal_arrival: TimeNs::from_ns(100.0),
            },
        }
    }

    fn verdict(t: f64, flow: u64, v: Verdict) -> TraceEvent {
        let mut e = TraceEvent::new(TimeNs::from_ns(t), 0, TraceKind::Verdict, PortId::ToHost(7));
        e.flow_id = Some(flow);
        e.detector = Some(DetectorKind::Didie);
        e.verdict = Some(v);
        e
    }

    #[test]
    fn all_correct() {
        let flows = vec![regular(0, 10.0), incast(1, 101.0, 1), incast(2, 104.0, 2)];
        let trace = vec![
            verdict(10.0, 0, Verdict::Regular),
            verdict(101.0, 1, Verdict::Regular),
            verdict(104.0, 2, Verdict::Incast),
            verdict(104.0, 1, Verdict::Incast),
        ];
        let dets = [DetectorConfig::Didie(DidieConfig::default())];
        let m = compute_metrics(&trace, &flows, &dets).unwrap();
        let d = &m.detectors[0];
        assert_eq!(d.tpr, Some(1.0));
        assert_eq!(d.fpr, Some(0.0));
        assert_eq!(d.fnr, Some(0.0));
        assert_eq!(d.detected_incasts, 1);
        assert_eq!(d.latencies_ns, vec![4.0]);
    }

    #[test]
    fn no_incasts_means_undefined_tpr() {
        let flows = vec![regular(0, 10.0)];
        let trace = vec![verdict(10.0, 0, Verdict::Regular)];
        let dets = [DetectorConfig::Didie(DidieConfig::default())];
        let d = &compute_metrics(&trace, &flows, &dets).unwrap().detectors[0];
        assert_eq!(d.tpr, None);
        assert_eq!(d.fnr, None);
        assert_eq!(d.fpr, Some(0.0));
        assert_eq!(d.latency, LatencyStats::default());
        assert_eq!(summary_csv_row(d), "didie,14,,0,,,,0,0");
    }

    #[test]
    fn missing_ground_truth() {
        let mut e = TraceEvent::new(TimeNs::ZERO, 0, TraceKind::FlowStart, PortId::ToHost(1));
        e.flow_id = Some(0);
        assert!(compute_metrics(&[e.clone()], &[], &[]).is_err());
        assert!(compute_metrics(&[e], &[regular(3, 0.0)], &[]).is_err());
    }

    #[test]
    fn queue_detection_flags_resident_flows() {
        let flows = vec![regular(0, 0.0), incast(1, 100.0, 1), incast(2, 100.0, 2)];
        let port = PortId::Trunk { from: 0 };
        let q = |t: f64, kind: TraceKind, flow: u64| {
            let mut e = TraceEvent::new(TimeNs::from_ns(t), 0, kind, port);
            e.flow_id = Some(flow);
            e.bytes = Some(1100);
            e
        };
        let mut det = TraceEvent::new(TimeNs::from_ns(300.0), 0, TraceKind::Detection, port);
        det.detector = Some(DetectorKind::Qlen);
        let trace = vec![
            q(0.0, TraceKind::Enqueue, 0),
            q(0.0, TraceKind::Dequeue, 0),
            q(100.0, TraceKind::Enqueue, 1),
            q(100.0, TraceKind::Dequeue, 1),
            q(100.0, TraceKind::Enqueue, 2),
            det,
        ];
        let dets = [DetectorConfig::Qlen { threshold_bytes: 1000 }];
        let d = &compute_metrics(&trace, &flows, &dets).unwrap().detectors[0];
        assert_eq!(d.true_positives, 1);
        assert_eq!(d.false_positives, 0);
        assert_eq!(d.tpr, Some(0.5));
        assert_eq!(d.latencies_ns, vec![200.0]);
    }

    #[test]
    fn percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = LatencyStats::from_samples(&v);
        assert_eq!(s.mean_ns, Some(50.5));
        assert_eq!(s.p50_ns, Some(50.0));
        assert_eq!(s.p99_ns, Some(99.0));
        assert_eq!(s.max_ns, Some(100.0));
        assert_eq!(LatencyStats::from_samples(&[7.0]).p99_ns, Some(7.0));
    }

    #[test]
    fn pooling_adds_counts() {
        let a = DetectorMetrics::from_counts(DetectorKind::Qlen, 1.0, [2, 4, 1, 1], 1, vec![10.0]);
        let b = DetectorMetrics::from_counts(DetectorKind::Qlen, 1.0, [2, 4, 2, 0], 1, vec![20.0]);
        let p = DetectorMetrics::pool(&[a.clone(), b]).unwrap();
        assert_eq!(p.tpr, Some(0.75));
        assert_eq!(p.fpr, Some(0.125));
        assert_eq!(p.latency.mean_ns, Some(15.0));
        let c = DetectorMetrics::from_counts(DetectorKind::Qgrad, 1.0, [0; 4], 0, vec![]);
        assert!(DetectorMetrics::pool(&[a, c]).is_err());
    }
}
