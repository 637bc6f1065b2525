//! Discrete-event simulator of a two-switch dumbbell.

mod engine;
pub mod invariants;
mod topology;
mod trace;
mod traffic;

pub use engine::{
    attach_detector, run, run_flows, DetectorConfig, SimConfig, SimOutput,
    DEFAULT_PACKET_SIZE_BYTES,
};
pub use topology::{PortId, Topology};
pub use trace::{parse_trace, DetectorKind, TraceEvent, TraceKind};
pub use traffic::{
    gen_incast_traffic, gen_regular_traffic, generate_flows, IncastSpec, RegularSpec, TrafficSpec,
};
