use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::model::ServerId;

/// Two switches joined by one trunk link. Servers `0..n_left` hang off
/// switch 0, the rest off switch 1. Every link runs at the same rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub n_left: usize,
    pub n_right: usize,
    pub link_rate_bps: f64,
    pub link_delay_ns: f64,
    #[serde(default = "default_queue_cap")]
    pub queue_cap_bytes: u64,
}

fn default_queue_cap() -> u64 {
    1_000_000
}

impl Default for Topology {
    fn default() -> Self {
        Topology::dumbbell(4, 4)
    }
}

impl Topology {
    /// 1 Gbps links with 1 us delay.
    pub fn dumbbell(n_left: usize, n_right: usize) -> Self {
        Topology {
            n_left,
            n_right,
            link_rate_bps: 1e9,
            link_delay_ns: 1_000.0,
            queue_cap_bytes: default_queue_cap(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_left < 1 || self.n_right < 1 {
            return Err(config("each side of the dumbbell needs at least one server"));
        }
        if !(self.link_rate_bps.is_finite() && self.link_rate_bps > 0.0) {
            return Err(config("link rate must be > 0"));
        }
        if !(self.link_delay_ns.is_finite() && self.link_delay_ns >= 0.0) {
            return Err(config("link delay must be >= 0"));
        }
        if self.queue_cap_bytes == 0 {
            return Err(config("queue cap must be > 0"));
        }
        Ok(())
    }

    pub fn card_i(&self) -> usize {
        self.n_left + self.n_right
    }

    pub fn switch_of(&self, server: ServerId) -> usize {
        usize::from(server >= self.n_left)
    }

    pub fn left_servers(&self) -> Vec<ServerId> {
        (0..self.n_left).collect()
    }

    pub fn right_servers(&self) -> Vec<ServerId> {
        (self.n_left..self.card_i()).collect()
    }

    pub fn serialization_ns(&self, bytes: u64) -> f64 {
        bytes as f64 * 8.0 * 1e9 / self.link_rate_bps
    }

    /// Egress port a packet for `dip` takes at `switch`.
    pub fn route(&self, switch: usize, dip: ServerId) -> PortId {
        if self.switch_of(dip) == switch {
            PortId::ToHost(dip)
        } else {
            PortId::Trunk { from: switch }
        }
    }

    /// All switch egress ports, in a fixed order.
    pub fn ports(&self) -> Vec<PortId> {
        let mut v: Vec<PortId> = (0..self.card_i()).map(PortId::ToHost).collect();
        v.push(PortId::Trunk { from: 0 });
        v.push(PortId::Trunk { from: 1 });
        v
    }

    pub fn port_index(&self, port: PortId) -> usize {
        match port {
            PortId::ToHost(s) => s,
            PortId::Trunk { from } => self.card_i() + from,
        }
    }
}

/// A switch egress port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PortId {
    /// Port of the edge switch facing server `s`.
    ToHost(ServerId),
    /// Trunk port of switch `from` towards the other switch.
    Trunk { from: usize },
}

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortId::ToHost(s) => write!(f, "h{s}"),
            PortId::Trunk { from } => write!(f, "sw{from}-sw{}", 1 - from),
        }
    }
}

impl FromStr for PortId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || config(format!("unknown port label `{s}`"));
        if let Some(rest) = s.strip_prefix('h') {
            return rest.parse().map(PortId::ToHost).map_err(|_| bad());
        }
        match s {
            "sw0-sw1" => Ok(PortId::Trunk { from: 0 }),
            "sw1-sw0" => Ok(PortId::Trunk { from: 1 }),
            _ => Err(bad()),
        }
    }
}
