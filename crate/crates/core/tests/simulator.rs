use incastlab_core::didie::Verdict;
use incastlab_core::experiment::{table3_incast_only, table4_mixed};
use incastlab_core::metrics::compute_metrics;
use incastlab_core::netsim::{
    attach_detector, invariants, parse_trace, run, run_flows, DetectorConfig, DetectorKind, IncastSpec,
    PortId, SimConfig, Topology, TraceEvent, TraceKind, TrafficSpec,
};
use serde_json::json;

fn incast_only(n: usize) -> SimConfig {
    table3_incast_only().remove(n - 2).sim
}

fn short_mixed(seed: u64) -> SimConfig {
    let mut sim = table4_mixed(0.6, false).unwrap().sim;
    sim.duration_ns = 2e7;
    sim.seed = seed;
    sim
}

fn port_switch(topo: &Topology, port: PortId) -> usize {
    match port {
        PortId::Trunk { from } => from,
        PortId::ToHost(s) => topo.switch_of(s),
    }
}

#[test]
fn four_to_one_all_flows_flagged_before_second_arrival() {
    let sim = incast_only(4);
    let out = run(&sim).unwrap();
    let m = compute_metrics(&out.trace, &out.flows, &sim.detectors).unwrap();
    let didie = m.get(DetectorKind::Didie).unwrap();
    assert_eq!(didie.incast_flows, 4);
    assert_eq!(didie.true_positives, 4);
    let first = out
        .trace
        .iter()
        .find(|e| e.kind == TraceKind::Verdict && e.verdict == Some(Verdict::Incast))
        .unwrap();
    let mut starts: Vec<f64> = out
        .trace
        .iter()
        .filter(|e| e.kind == TraceKind::FlowStart && e.port == first.port)
        .map(|e| e.t.ns())
        .collect();
    starts.sort_by(f64::total_cmp);
    assert!(first.t.ns() <= starts[1]);
    // exactly one backfill per port that saw the incast
    let revised = out.trace.iter().filter(|e| e.revised == Some(true)).count();
    let ports = out
        .trace
        .iter()
        .filter(|e| e.kind == TraceKind::Verdict && e.verdict == Some(Verdict::Incast))
        .map(|e| e.port)
        .collect::<std::collections::HashSet<_>>();
    assert_eq!(revised, ports.len());
}

#[test]
fn qlen_detection_times_follow_the_fill_model() {
    // net growth (N - 1) Gb/s fills 10 KB in 80 / 40 / 26.7 us
    for (n, fill) in [(2, 80_000.0), (3, 40_000.0), (4, 26_667.0)] {
        let sim = incast_only(n);
        let out = run(&sim).unwrap();
        let m = compute_metrics(&out.trace, &out.flows, &sim.detectors).unwrap();
        let lat = m.get(DetectorKind::Qlen).unwrap().latency.mean_ns.unwrap();
        assert!((lat - fill).abs() / fill < 0.15, "{n}-to-1: {lat} vs {fill}");
    }
}

#[test]
fn qlen_detection_is_nonincreasing_in_fan_in() {
    let lat: Vec<f64> = (2..=4)
        .map(|n| {
            let sim = incast_only(n);
            let out = run(&sim).unwrap();
            let m = compute_metrics(&out.trace, &out.flows, &sim.detectors).unwrap();
            m.get(DetectorKind::Qlen).unwrap().latency.mean_ns.unwrap()
        })
        .collect();
    assert!(lat.windows(2).all(|w| w[1] <= w[0]), "{lat:?}");
}

#[test]
fn same_seed_same_trace() {
    let a = run(&short_mixed(3)).unwrap();
    let b = run(&short_mixed(3)).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.flows, b.flows);
    let c = run(&short_mixed(4)).unwrap();
    assert_ne!(a.flows, c.flows);
}

#[test]
fn detectors_do_not_change_packet_behaviour() {
    let with = short_mixed(5);
    let mut without = with.clone();
    without.detectors.clear();
    let a = run(&with).unwrap();
    let b = run(&without).unwrap();
    assert!(!b.trace.iter().any(|e| matches!(e.kind, TraceKind::Verdict | TraceKind::Detection)));
    assert_eq!(invariants::packet_events(&a.trace), invariants::packet_events(&b.trace));
}

#[test]
fn verdicts_at_first_hop_ignore_flow_sizes() {
    let sim = short_mixed(6);
    let a = run(&sim).unwrap();
    let resized: Vec<_> = a
        .flows
        .iter()
        .map(|f| {
            let mut f = *f;
            f.size_bytes = 1 + f.size_bytes / 3;
            f
        })
        .collect();
    let b = run_flows(&sim, resized).unwrap();
    let first_hop = |trace: &[TraceEvent]| -> Vec<(u64, Option<u64>, Option<Verdict>, Option<bool>)> {
        trace
            .iter()
            .filter(|e| e.kind == TraceKind::Verdict)
            .filter(|e| port_switch(&sim.topology, e.port) == sim.topology.switch_of(e.sip.unwrap()))
            .map(|e| (e.t.ns().to_bits(), e.flow_id, e.verdict, e.revised))
            .collect()
    };
    let va = first_hop(&a.trace);
    assert!(!va.is_empty());
    assert_eq!(va, first_hop(&b.trace));
}

#[test]
fn attach_detector_contract() {
    let base = SimConfig { detectors: vec![], ..incast_only(4) };
    let cfg = attach_detector(base.clone(), "didie", json!({"epsilon_ns": 14.0})).unwrap();
    let cfg = attach_detector(cfg, "qlen", json!({"threshold_bytes": 10_000})).unwrap();
    let out = run(&cfg).unwrap();
    assert!(out.trace.iter().any(|e| e.detector == Some(DetectorKind::Didie)));
    assert!(out.trace.iter().any(|e| e.detector == Some(DetectorKind::Qlen)));

    assert!(attach_detector(cfg.clone(), "qlen", json!({"threshold_bytes": 5_000})).is_err());
    assert!(attach_detector(base.clone(), "didie", json!({"alpha": 1.5})).is_err());
    assert!(attach_detector(base.clone(), "didie", json!({"alpha": 0.0})).is_err());
    assert!(attach_detector(base.clone(), "ecn", json!({})).is_err());
    assert!(attach_detector(base, "qgrad", json!({"window_ns": 0.0, "threshold_bits_per_s": 1e9})).is_err());
}

/// Occupancy right after every event at or before `t`.
fn occupancy_at(events: &[&TraceEvent], t: f64) -> u64 {
    events
        .iter()
        .take_while(|e| e.t.ns() <= t)
        .last()
        .and_then(|e| e.queue_bytes)
        .unwrap_or(0)
}

#[test]
fn saturated_incast_grows_the_queue_at_the_excess_rate() {
    let topo = Topology::dumbbell(4, 4);
    let pkt = topo.serialization_ns(1100);
    for k in 2..=4usize {
        let traffic = TrafficSpec {
            regular: None,
            incast: Some(IncastSpec {
                schedule_ns: Some(vec![10_000.0]),
                lambda_n1_per_ns: None,
                fan_in: k,
                sigma_offset_ns: 0.0,
                flow_size_bytes: 220_000,
                senders: Some((0..k).collect()),
                receivers: Some(vec![4]),
            }),
        };
        let sim = SimConfig::new(topo.clone(), traffic, 1e7);
        let out = run(&sim).unwrap();
        let trunk = PortId::Trunk { from: 0 };
        let events: Vec<&TraceEvent> = out
            .trace
            .iter()
            .filter(|e| e.port == trunk && matches!(e.kind, TraceKind::Enqueue | TraceKind::Dequeue))
            .collect();
        let expected = (k - 1) as f64 * topo.link_rate_bps;
        for (skip, len) in [(2, 10), (5, 17), (20, 40), (50, 100)] {
            let t0 = 10_000.0 + skip as f64 * pkt;
            let t1 = t0 + len as f64 * pkt;
            let grown = occupancy_at(&events, t1) as f64 - occupancy_at(&events, t0) as f64;
            let rate = grown * 8.0 * 1e9 / (t1 - t0);
            assert!(
                (rate - expected).abs() / expected <= 0.05,
                "{k}-to-1 over {len} packets: {rate} vs {expected}"
            );
        }
    }
}

#[test]
fn tail_drop_respects_the_cap() {
    let mut sim = incast_only(4);
    sim.topology.queue_cap_bytes = 5_500;
    let out = run(&sim).unwrap();
    assert!(out.trace.iter().any(|e| e.kind == TraceKind::Drop));
    invariants::check_all(&out.trace, &sim.topology).unwrap();
    let max_q = out.trace.iter().filter_map(|e| e.queue_bytes).max().unwrap();
    assert!(max_q <= 5_500);
}

#[test]
fn empty_traffic_yields_an_empty_summary() {
    let mut sim = incast_only(2);
    sim.traffic = TrafficSpec::default();
    let out = run(&sim).unwrap();
    assert!(out.flows.is_empty());
    assert!(out.trace.is_empty());
    let m = compute_metrics(&out.trace, &out.flows, &sim.detectors).unwrap();
    assert_eq!(m.flows, 0);
    for d in &m.detectors {
        assert_eq!(d.tpr, None);
        assert_eq!(d.fpr, None);
        assert_eq!(d.total_incasts, 0);
    }
}

#[test]
fn invariant_checks_catch_corrupted_traces() {
    let sim = incast_only(3);
    let out = run(&sim).unwrap();
    invariants::check_all(&out.trace, &sim.topology).unwrap();

    let mut bad = out.trace.clone();
    let i = bad.iter().position(|e| e.kind == TraceKind::Enqueue && e.queue_bytes > Some(0)).unwrap();
    bad[i].queue_bytes = Some(bad[i].queue_bytes.unwrap() + 1);
    assert!(invariants::check_conservation(&bad).is_err());

    let mut bad = out.trace.clone();
    let i = bad.iter().position(|e| e.kind == TraceKind::Dequeue).unwrap();
    bad[i].t = incastlab_core::TimeNs::from_ns(0.0);
    assert!(invariants::check_all(&bad, &sim.topology).is_err());

    assert!(invariants::check_cap(&out.trace, 1_000).is_err());
}

#[test]
fn trace_survives_a_jsonl_round_trip() {
    let out = run(&short_mixed(8)).unwrap();
    let text: String = out.trace.iter().map(|e| e.to_json_line() + "\n").collect();
    let back = parse_trace(&text).unwrap();
    assert_eq!(back.len(), out.trace.len());
    for (a, b) in out.trace.iter().zip(&back) {
        assert!((a.t.ns() - b.t.ns()).abs() <= 5e-4);
        let mut b = b.clone();
        b.t = a.t;
        assert_eq!(*a, b);
    }
}

#[test]
fn detectors_watch_every_port() {
    let sim = SimConfig {
        detectors: vec![DetectorConfig::Qlen { threshold_bytes: 1_100 }],
        ..short_mixed(9)
    };
    let out = run(&sim).unwrap();
    let ports: std::collections::HashSet<_> = out
        .trace
        .iter()
        .filter(|e| e.kind == TraceKind::Detection)
        .map(|e| e.port)
        .collect();
    let busy: std::collections::HashSet<_> = out
        .trace
        .iter()
        .filter(|e| e.queue_bytes.unwrap_or(0) >= 1_100)
        .map(|e| e.port)
        .collect();
    assert!(busy.len() > 2);
    assert_eq!(ports, busy);
}
