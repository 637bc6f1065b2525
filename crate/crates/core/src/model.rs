//! Flow-level domain types shared by the generator, the detectors and the
//! metrics code.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::time::TimeNs;

/// Server index in `[0, |I|)`.
pub type ServerId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub flow_id: u64,
    pub sip: ServerId,
    pub dip: ServerId,
}

impl FlowKey {
    pub fn new(flow_id: u64, sip: ServerId, dip: ServerId) -> Result<Self> {
        if sip == dip {
            return Err(param(format!("flow {flow_id}: sip == dip == {sip}")));
        }
        Ok(FlowKey { flow_id, sip, dip })
    }
}

/// Generator-side label. Never visible to detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Regular {
        traffic_index: u64,
    },
    Incast {
        traffic_index: u64,
        /// 1-based position inside the incast, in arrival order.
        flow_index: u32,
        flow_count: u32,
        /// Ideal receiving time `t*` of the incast, before the half-normal offset.
        ideal_arrival: TimeNs,
    },
}

impl GroundTruth {
    pub fn is_incast(&self) -> bool {
        matches!(self, GroundTruth::Incast { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if let GroundTruth::Incast { flow_index, flow_count, .. } = *self {
            if flow_count < 2 || flow_index < 1 || flow_index > flow_count {
                return Err(param(format!(
                    "incast flow index {flow_index} of {flow_count} is out of range"
                )));
            }
        }
        Ok(())
    }
}

/// First-packet arrival of a flow at a switch port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowArrival {
    pub key: FlowKey,
    pub t_arrival: TimeNs,
    pub size_bytes: u64,
    pub truth: GroundTruth,
}

impl FlowArrival {
    pub fn validate(&self) -> Result<()> {
        if self.size_bytes == 0 {
            return Err(param(format!("flow {} has zero size", self.key.flow_id)));
        }
        if self.key.sip == self.key.dip {
            return Err(param(format!("flow {}: sip == dip", self.key.flow_id)));
        }
        self.truth.validate()
    }
}
