//! Checks of packet-level properties every simulation trace must satisfy.

use std::collections::{HashMap, VecDeque};

use crate::error::{Error, Result};

use super::topology::{PortId, Topology};
use super::trace::{TraceEvent, TraceKind};

/// Slack for sums of floating-point serialization times.
const TIME_SLACK_NS: f64 = 1e-6;

fn violation(msg: String) -> Error {
    Error::Invariant(msg)
}

/// Events are sorted by time and carry strictly increasing sequence numbers.
pub fn check_order(trace: &[TraceEvent]) -> Result<()> {
    for w in trace.windows(2) {
        if w[1].t < w[0].t || w[1].seq <= w[0].seq {
            return Err(violation(format!(
                "event seq {} at {} ns follows seq {} at {} ns",
                w[1].seq, w[1].t, w[0].seq, w[0].t
            )));
        }
    }
    Ok(())
}

/// Per port, offered bytes minus dequeued minus dropped equals the final
/// occupancy, and every reported occupancy matches the running balance.
pub fn check_conservation(trace: &[TraceEvent]) -> Result<()> {
    #[derive(Default)]
    struct Tally {
        offered: u64,
        dequeued: u64,
        dropped: u64,
        occupancy: u64,
    }
    let mut ports: HashMap<PortId, Tally> = HashMap::new();
    for e in trace {
        let bytes = e.bytes.unwrap_or(0);
        let tally = ports.entry(e.port).or_default();
        match e.kind {
            TraceKind::Enqueue => {
                tally.offered += bytes;
                tally.occupancy += bytes;
            }
            TraceKind::Dequeue => {
                tally.dequeued += bytes;
                tally.occupancy = tally.occupancy.checked_sub(bytes).ok_or_else(|| {
                    violation(format!("port {}: dequeue of {bytes} B from a shorter queue", e.port))
                })?;
            }
            TraceKind::Drop => {
                tally.offered += bytes;
                tally.dropped += bytes;
            }
            _ => continue,
        }
        if matches!(e.kind, TraceKind::Enqueue | TraceKind::Dequeue)
            && e.queue_bytes != Some(tally.occupancy)
        {
            return Err(violation(format!(
                "port {} at {} ns reports {:?} B, balance is {} B",
                e.port, e.t, e.queue_bytes, tally.occupancy
            )));
        }
    }
    for (port, t) in &ports {
        if t.offered - t.dequeued - t.dropped != t.occupancy {
            return Err(violation(format!("port {port}: bytes not conserved")));
        }
    }
    Ok(())
}

/// Occupancy never exceeds the buffer size.
pub fn check_cap(trace: &[TraceEvent], cap_bytes: u64) -> Result<()> {
    match trace.iter().find(|e| e.queue_bytes.is_some_and(|q| q > cap_bytes)) {
        Some(e) => Err(violation(format!(
            "port {} holds {:?} B at {} ns, cap is {cap_bytes} B",
            e.port, e.queue_bytes, e.t
        ))),
        None => Ok(()),
    }
}

/// FIFO service per port: each dequeue matches the oldest waiting packet
/// and happens no earlier than its enqueue, and a port starts a new
/// transmission only after the previous one has been serialized.
pub fn check_causality(trace: &[TraceEvent], topo: &Topology) -> Result<()> {
    let mut waiting: HashMap<PortId, VecDeque<(f64, Option<u64>, u64)>> = HashMap::new();
    let mut free_at: HashMap<PortId, f64> = HashMap::new();
    for e in trace {
        let bytes = e.bytes.unwrap_or(0);
        match e.kind {
            TraceKind::Enqueue => {
                waiting.entry(e.port).or_default().push_back((e.t.ns(), e.flow_id, bytes));
            }
            TraceKind::Dequeue => {
                let (t_enq, flow, b) = waiting
                    .get_mut(&e.port)
                    .and_then(|q| q.pop_front())
                    .ok_or_else(|| violation(format!("port {}: dequeue from empty FIFO", e.port)))?;
                if flow != e.flow_id || b != bytes {
                    return Err(violation(format!("port {}: dequeue out of FIFO order at {} ns", e.port, e.t)));
                }
                if e.t.ns() < t_enq {
                    return Err(violation(format!("port {}: dequeue before enqueue at {} ns", e.port, e.t)));
                }
                let free = free_at.entry(e.port).or_insert(f64::NEG_INFINITY);
                if e.t.ns() + TIME_SLACK_NS < *free {
                    return Err(violation(format!(
                        "port {}: transmission at {} ns overlaps the previous one ending at {free} ns",
                        e.port, e.t
                    )));
                }
                *free = e.t.ns() + topo.serialization_ns(bytes);
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn check_all(trace: &[TraceEvent], topo: &Topology) -> Result<()> {
    check_order(trace)?;
    check_conservation(trace)?;
    check_cap(trace, topo.queue_cap_bytes)?;
    check_causality(trace, topo)
}

/// Packet-level events with sequence numbers stripped, for comparing runs
/// that differ only in attached detectors.
pub fn packet_events(trace: &[TraceEvent]) -> Vec<TraceEvent> {
    trace
        .iter()
        .filter(|e| e.kind.is_packet_level())
        .map(|e| TraceEvent { seq: 0, ..e.clone() })
        .collect()
}
