//! Event loop of the dumbbell simulator.
//!
//! Every flow is transmitted at link rate with no congestion control, and
//! its first packet is fully received by the edge switch at the flow's
//! generated arrival time.
//! Switches are store-and-forward with one FIFO per egress port. The
//! reported occupancy of a port counts the packets waiting in its buffer,
//! not the one being serialized; a packet is dequeued when its
//! transmission starts.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::baseline::{QgradDetector, QlenDetector, QueueEvent, QueueSample};
use crate::didie::{DidieConfig, DidieDetector, Verdict};
use crate::error::{config, Result};
use crate::model::FlowArrival;
use crate::time::TimeNs;

use super::topology::{PortId, Topology};
use super::trace::{DetectorKind, TraceEvent, TraceKind};
use super::traffic::{generate_flows, TrafficSpec};

pub const DEFAULT_PACKET_SIZE_BYTES: u64 = 1100;

fn default_packet_size() -> u64 {
    DEFAULT_PACKET_SIZE_BYTES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorConfig {
    Didie(DidieConfig),
    Qlen { threshold_bytes: u64 },
    Qgrad { window_ns: f64, threshold_bits_per_s: f64 },
}

impl DetectorConfig {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorConfig::Didie(_) => DetectorKind::Didie,
            DetectorConfig::Qlen { .. } => DetectorKind::Qlen,
            DetectorConfig::Qgrad { .. } => DetectorKind::Qgrad,
        }
    }

    /// Threshold in the detector's own unit (ns, bytes, bits/s).
    pub fn threshold(&self) -> f64 {
        match self {
            DetectorConfig::Didie(c) => c.epsilon_ns,
            DetectorConfig::Qlen { threshold_bytes } => *threshold_bytes as f64,
            DetectorConfig::Qgrad { threshold_bits_per_s, .. } => *threshold_bits_per_s,
        }
    }

    pub fn validate(&self, topo: &Topology) -> Result<()> {
        self.instantiate(topo).map(|_| ())
    }

    fn instantiate(&self, topo: &Topology) -> Result<PortDetector> {
        Ok(match self {
            DetectorConfig::Didie(c) => {
                let mut c = c.clone();
                c.card_i.get_or_insert(topo.card_i() as u32);
                PortDetector::Didie(DidieDetector::new(c)?)
            }
            DetectorConfig::Qlen { threshold_bytes } => {
                PortDetector::Qlen(QlenDetector::new(*threshold_bytes)?)
            }
            DetectorConfig::Qgrad { window_ns, threshold_bits_per_s } => {
                PortDetector::Qgrad(QgradDetector::new(*window_ns, threshold_bits_per_s / 8.0)?)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub traffic: TrafficSpec,
    #[serde(default = "default_packet_size")]
    pub packet_size_bytes: u64,
    #[serde(default)]
    pub detectors: Vec<DetectorConfig>,
    #[serde(default)]
    pub seed: u64,
    pub duration_ns: f64,
}

impl SimConfig {
    pub fn new(topology: Topology, traffic: TrafficSpec, duration_ns: f64) -> Self {
        SimConfig {
            topology,
            traffic,
            packet_size_bytes: DEFAULT_PACKET_SIZE_BYTES,
            detectors: Vec::new(),
            seed: 0,
            duration_ns,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        if !(self.duration_ns.is_finite() && self.duration_ns > 0.0) {
            return Err(config(format!("duration must be > 0, got {}", self.duration_ns)));
        }
        if self.packet_size_bytes == 0 {
            return Err(config("packet size must be > 0"));
        }
        self.traffic.validate(&self.topology)?;
        let mut kinds = Vec::new();
        for d in &self.detectors {
            if kinds.contains(&d.kind()) {
                return Err(config(format!("detector `{}` attached twice", d.kind().as_str())));
            }
            kinds.push(d.kind());
            d.validate(&self.topology)?;
        }
        Ok(())
    }

    /// Registers a detector on every switch egress port.
    pub fn attach(mut self, detector: DetectorConfig) -> Result<Self> {
        if self.detectors.iter().any(|d| d.kind() == detector.kind()) {
            return Err(config(format!("detector `{}` attached twice", detector.kind().as_str())));
        }
        detector.validate(&self.topology)?;
        self.detectors.push(detector);
        Ok(self)
    }
}

/// Attaches a detector given by name and a JSON parameter object.
pub fn attach_detector(cfg: SimConfig, kind: &str, params: serde_json::Value) -> Result<SimConfig> {
    kind.parse::<DetectorKind>()?;
    let mut obj = match params {
        serde_json::Value::Object(m) => m,
        serde_json::Value::Null => serde_json::Map::new(),
        _ => return Err(config("detector parameters must be a JSON object")),
    };
    obj.insert("kind".into(), kind.into());
    let det: DetectorConfig = serde_json::from_value(serde_json::Value::Object(obj))
        .map_err(|e| config(format!("detector `{kind}`: {e}")))?;
    cfg.attach(det)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    /// Generated flows, indexed by flow id, with ground truth.
    pub flows: Vec<FlowArrival>,
    pub trace: Vec<TraceEvent>,
}

/// Generates traffic from the config's spec and seed, then simulates it.
pub fn run(cfg: &SimConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let flows = generate_flows(&cfg.traffic, &cfg.topology, cfg.duration_ns, cfg.seed)?;
    run_flows(cfg, flows)
}

/// Simulates an explicit flow list. Flow ids must equal list positions.
pub fn run_flows(cfg: &SimConfig, flows: Vec<FlowArrival>) -> Result<SimOutput> {
    cfg.validate()?;
    let card = cfg.topology.card_i();
    for (i, f) in flows.iter().enumerate() {
        f.validate()?;
        if f.key.flow_id != i as u64 {
            return Err(config(format!("flow at position {i} has id {}", f.key.flow_id)));
        }
        if f.key.sip >= card || f.key.dip >= card {
            return Err(config(format!("flow {i} uses a server outside [0, {card})")));
        }
    }
    if flows.len() > u32::MAX as usize {
        return Err(config("too many flows"));
    }
    let trace = Engine::new(cfg, &flows)?.run();
    Ok(SimOutput { flows, trace })
}

enum PortDetector {
    Didie(DidieDetector),
    Qlen(QlenDetector),
    Qgrad(QgradDetector),
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    flow: u32,
    bytes: u32,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    PortFree(usize),
    /// The flow's source is ready to serialize its next packet.
    FlowSend(u32),
    Arrive { switch: usize, pkt: Packet },
}

impl Ev {
    /// Same-time order: a port that finishes serializing is served before
    /// anything new arrives at that instant.
    fn class(&self) -> u8 {
        match self {
            Ev::PortFree(_) => 0,
            Ev::FlowSend(_) => 1,
            Ev::Arrive { .. } => 2,
        }
    }
}

struct Scheduled {
    t: f64,
    class: u8,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .t
            .total_cmp(&self.t)
            .then(other.class.cmp(&self.class))
            .then(other.seq.cmp(&self.seq))
    }
}

struct Port {
    id: PortId,
    queue: VecDeque<Packet>,
    queue_bytes: u64,
    busy: bool,
    didie: Option<DidieDetector>,
    qlen: Option<QlenDetector>,
    qgrad: Option<QgradDetector>,
}

struct Engine<'a> {
    topo: &'a Topology,
    flows: &'a [FlowArrival],
    packet_size: u64,
    end_ns: f64,
    heap: BinaryHeap<Scheduled>,
    ev_seq: u64,
    ports: Vec<Port>,
    /// Bytes each flow still has to put on its access link.
    remaining: Vec<u64>,
    /// Bit `s` set once the flow's first packet reached switch `s`.
    seen: Vec<u8>,
    trace: Vec<TraceEvent>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig, flows: &'a [FlowArrival]) -> Result<Self> {
        let topo = &cfg.topology;
        let mut ports = Vec::new();
        for id in topo.ports() {
            let mut port = Port {
                id,
                queue: VecDeque::new(),
                queue_bytes: 0,
                busy: false,
                didie: None,
                qlen: None,
                qgrad: None,
            };
            for d in &cfg.detectors {
                match d.instantiate(topo)? {
                    PortDetector::Didie(x) => port.didie = Some(x),
                    PortDetector::Qlen(x) => port.qlen = Some(x),
                    PortDetector::Qgrad(x) => port.qgrad = Some(x),
                }
            }
            ports.push(port);
        }
        Ok(Engine {
            topo,
            flows,
            packet_size: cfg.packet_size_bytes,
            end_ns: cfg.duration_ns,
            heap: BinaryHeap::new(),
            ev_seq: 0,
            ports,
            remaining: flows.iter().map(|f| f.size_bytes).collect(),
            seen: vec![0; flows.len()],
            trace: Vec::new(),
        })
    }

    fn schedule(&mut self, t: f64, ev: Ev) {
        let seq = self.ev_seq;
        self.ev_seq += 1;
        self.heap.push(Scheduled { t, class: ev.class(), seq, ev });
    }

    fn record(&mut self, mut e: TraceEvent) {
        e.seq = self.trace.len() as u64;
        self.trace.push(e);
    }

    fn run(mut self) -> Vec<TraceEvent> {
        for (i, f) in self.flows.iter().enumerate() {
            // back-date so the first packet is fully received by the edge
            // switch at the nominal arrival time
            let first = f.size_bytes.min(self.packet_size);
            let start = f.t_arrival.ns() - self.topo.serialization_ns(first) - self.topo.link_delay_ns;
            self.schedule(start, Ev::FlowSend(i as u32));
        }
        let mut last_t = 0.0f64;
        while let Some(Scheduled { t, ev, .. }) = self.heap.pop() {
            last_t = last_t.max(t);
            match ev {
                Ev::FlowSend(f) => self.flow_send(f, t),
                Ev::Arrive { switch, pkt } => self.arrive(switch, pkt, t),
                Ev::PortFree(p) => {
                    self.ports[p].busy = false;
                    if !self.ports[p].queue.is_empty() {
                        self.start_tx(p, t);
                    }
                }
            }
        }
        // close the gradient windows that ended before the run did
        let end = TimeNs::from_ns(last_t.max(self.end_ns));
        for p in 0..self.ports.len() {
            if let Some(q) = self.ports[p].qgrad.as_mut() {
                let d = q.advance(end).expect("trace time is monotone");
                if let Some(d) = d {
                    self.detection(p, DetectorKind::Qgrad, d.t, d.queue_bytes);
                }
            }
        }
        // gradient detections are emitted when their window is closed,
        // which can be after later events on other ports
        self.trace.sort_by(|a, b| a.t.cmp(&b.t).then(a.seq.cmp(&b.seq)));
        for (i, e) in self.trace.iter_mut().enumerate() {
            e.seq = i as u64;
        }
        self.trace
    }

    /// Each flow is paced at the full link rate on its own, so its packets
    /// reach the edge switch back to back regardless of other flows from
    /// the same server.
    fn flow_send(&mut self, flow: u32, t: f64) {
        let remaining = self.remaining[flow as usize];
        let bytes = remaining.min(self.packet_size);
        self.remaining[flow as usize] = remaining - bytes;
        let ser = self.topo.serialization_ns(bytes);
        let switch = self.topo.switch_of(self.flows[flow as usize].key.sip);
        if remaining > bytes {
            self.schedule(t + ser, Ev::FlowSend(flow));
        }
        self.schedule(
            t + ser + self.topo.link_delay_ns,
            Ev::Arrive { switch, pkt: Packet { flow, bytes: bytes as u32 } },
        );
    }

    fn arrive(&mut self, switch: usize, pkt: Packet, t: f64) {
        let key = self.flows[pkt.flow as usize].key;
        let port_id = self.topo.route(switch, key.dip);
        let p = self.topo.port_index(port_id);
        let now = TimeNs::from_ns(t);

        let bit = 1u8 << switch;
        if self.seen[pkt.flow as usize] & bit == 0 {
            self.seen[pkt.flow as usize] |= bit;
            let mut e = TraceEvent::new(now, 0, TraceKind::FlowStart, port_id);
            e.flow_id = Some(key.flow_id);
            e.sip = Some(key.sip);
            e.dip = Some(key.dip);
            e.bytes = Some(self.flows[pkt.flow as usize].size_bytes);
            self.record(e);
            if let Some(det) = self.ports[p].didie.as_mut() {
                let obs = det.observe_flow_start(key, now).expect("flow starts are time-ordered");
                let mut e = TraceEvent::new(now, 0, TraceKind::Verdict, port_id);
                e.flow_id = Some(key.flow_id);
                e.sip = Some(key.sip);
                e.dip = Some(key.dip);
                e.detector = Some(DetectorKind::Didie);
                e.verdict = Some(obs.verdict.verdict);
                e.revised = Some(false);
                self.record(e);
                if let Some(b) = obs.backfill {
                    let mut e = TraceEvent::new(b.revision_time, 0, TraceKind::Verdict, port_id);
                    e.flow_id = Some(b.flow.flow_id);
                    e.sip = Some(b.flow.sip);
                    e.dip = Some(b.flow.dip);
                    e.detector = Some(DetectorKind::Didie);
                    e.verdict = Some(Verdict::Incast);
                    e.revised = Some(true);
                    self.record(e);
                }
            }
        }

        let bytes = pkt.bytes as u64;
        let port = &mut self.ports[p];
        if port.queue_bytes + bytes > self.topo.queue_cap_bytes {
            let mut e = TraceEvent::new(now, 0, TraceKind::Drop, port_id);
            e.flow_id = Some(key.flow_id);
            e.bytes = Some(bytes);
            e.queue_bytes = Some(port.queue_bytes);
            self.record(e);
            return;
        }
        port.queue.push_back(pkt);
        port.queue_bytes += bytes;
        let q = port.queue_bytes;
        self.queue_event(p, now, key.flow_id, QueueEvent::Enqueue { bytes }, q);
        if !self.ports[p].busy {
            self.start_tx(p, t);
        }
    }

    fn start_tx(&mut self, p: usize, t: f64) {
        let port = &mut self.ports[p];
        let pkt = port.queue.pop_front().expect("queued packet");
        let bytes = pkt.bytes as u64;
        port.queue_bytes -= bytes;
        port.busy = true;
        let q = port.queue_bytes;
        let port_id = port.id;
        let flow_id = self.flows[pkt.flow as usize].key.flow_id;
        self.queue_event(p, TimeNs::from_ns(t), flow_id, QueueEvent::Dequeue { bytes }, q);
        let ser = self.topo.serialization_ns(bytes);
        self.schedule(t + ser, Ev::PortFree(p));
        if let PortId::Trunk { from } = port_id {
            self.schedule(t + ser + self.topo.link_delay_ns, Ev::Arrive { switch: 1 - from, pkt });
        }
    }

    fn queue_event(&mut self, p: usize, t: TimeNs, flow_id: u64, event: QueueEvent, q: u64) {
        let sample = QueueSample { t, queue_bytes: q, event };
        let port_id = self.ports[p].id;
        if let Some(g) = self.ports[p].qgrad.as_mut() {
            if let Some(d) = g.advance(t).expect("queue samples are time-ordered") {
                self.detection(p, DetectorKind::Qgrad, d.t, d.queue_bytes);
            }
        }
        let (kind, bytes) = match event {
            QueueEvent::Enqueue { bytes } => (TraceKind::Enqueue, bytes),
            QueueEvent::Dequeue { bytes } => (TraceKind::Dequeue, bytes),
        };
        let mut e = TraceEvent::new(t, 0, kind, port_id);
        e.flow_id = Some(flow_id);
        e.bytes = Some(bytes);
        e.queue_bytes = Some(q);
        self.record(e);
        if let Some(g) = self.ports[p].qgrad.as_mut() {
            g.apply(&sample).expect("queue samples are time-ordered");
        }
        if let Some(l) = self.ports[p].qlen.as_mut() {
            if let Some(d) = l.observe(&sample).expect("queue samples are time-ordered") {
                self.detection(p, DetectorKind::Qlen, d.t, d.queue_bytes);
            }
        }
    }

    fn detection(&mut self, p: usize, kind: DetectorKind, t: TimeNs, queue_bytes: u64) {
        let mut e = TraceEvent::new(t, 0, TraceKind::Detection, self.ports[p].id);
        e.detector = Some(kind);
        e.queue_bytes = Some(queue_bytes);
        self.record(e);
    }
}
