//! Flow-arrival generation for regular and incast traffic.
//!
//! Generated times are first-packet arrivals at the sender's edge switch;
//! the simulator back-dates each sender start by one serialization time and
//! one link delay.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cdf::EmpiricalCdf;
use crate::error::{config, Result};
use crate::model::{FlowArrival, FlowKey, GroundTruth, ServerId};
use crate::sampling::{
    mean_interarrival_from_load, sample_exponential, sample_half_normal, seeded_rng,
    HalfNormalScale,
};
use crate::time::TimeNs;

use super::topology::Topology;

const REGULAR_STREAM: u64 = 1;
const INCAST_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    #[serde(default)]
    pub regular: Option<RegularSpec>,
    #[serde(default)]
    pub incast: Option<IncastSpec>,
}

/// Regular flows: either an explicit pooled rate, or a load fraction of the
/// link rate together with a size distribution.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularSpec {
    #[serde(default)]
    pub lambda11_per_ns: Option<f64>,
    #[serde(default)]
    pub load_fraction: Option<f64>,
    /// Flow-size distribution; the bundled placeholder when absent.
    #[serde(default)]
    pub cdf: Option<EmpiricalCdf>,
    #[serde(default)]
    pub fixed_size_bytes: Option<u64>,
}

impl RegularSpec {
    fn size_cdf(&self) -> EmpiricalCdf {
        self.cdf.clone().unwrap_or_else(EmpiricalCdf::default_background)
    }

    pub fn rate_per_ns(&self, topo: &Topology) -> Result<f64> {
        match (self.lambda11_per_ns, self.load_fraction) {
            (Some(l), None) => {
                if l.is_finite() && l >= 0.0 {
                    Ok(l)
                } else {
                    Err(config(format!("lambda11 must be >= 0, got {l}")))
                }
            }
            (None, Some(load)) => {
                let mean_bytes = match self.fixed_size_bytes {
                    Some(b) => b as f64,
                    None => self.size_cdf().mean_bytes(),
                };
                let gap = mean_interarrival_from_load(mean_bytes * 8.0, topo.link_rate_bps, load)?;
                Ok(1.0 / gap)
            }
            _ => Err(config("regular traffic needs exactly one of lambda11_per_ns, load_fraction")),
        }
    }

    fn sample_size<R: Rng>(&self, cdf: &EmpiricalCdf, rng: &mut R) -> u64 {
        match self.fixed_size_bytes {
            Some(b) => b,
            None => cdf.sample(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncastSpec {
    /// Ideal receiving times `t*` of each incast.
    #[serde(default)]
    pub schedule_ns: Option<Vec<f64>>,
    /// Poisson rate of incast traffics, alternative to a schedule.
    #[serde(default)]
    pub lambda_n1_per_ns: Option<f64>,
    pub fan_in: usize,
    pub sigma_offset_ns: f64,
    pub flow_size_bytes: u64,
    /// Candidate senders; every server when absent.
    #[serde(default)]
    pub senders: Option<Vec<ServerId>>,
    /// Candidate receivers; every server when absent.
    #[serde(default)]
    pub receivers: Option<Vec<ServerId>>,
}

impl IncastSpec {
    fn sender_pool(&self, topo: &Topology) -> Vec<ServerId> {
        self.senders.clone().unwrap_or_else(|| (0..topo.card_i()).collect())
    }

    fn receiver_pool(&self, topo: &Topology) -> Vec<ServerId> {
        self.receivers.clone().unwrap_or_else(|| (0..topo.card_i()).collect())
    }

    pub fn validate(&self, topo: &Topology) -> Result<()> {
        if self.fan_in < 2 {
            return Err(config(format!("incast fan-in must be >= 2, got {}", self.fan_in)));
        }
        if !(self.sigma_offset_ns.is_finite() && self.sigma_offset_ns >= 0.0) {
            return Err(config("incast offset sigma must be >= 0"));
        }
        if self.flow_size_bytes == 0 {
            return Err(config("incast flow size must be > 0"));
        }
        match (&self.schedule_ns, self.lambda_n1_per_ns) {
            (Some(s), None) => {
                if s.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                    return Err(config("incast schedule times must be >= 0"));
                }
            }
            (None, Some(l)) => {
                if !(l.is_finite() && l > 0.0) {
                    return Err(config("incast rate must be > 0"));
                }
            }
            _ => return Err(config("incast traffic needs exactly one of schedule_ns, lambda_n1_per_ns")),
        }
        let senders = self.sender_pool(topo);
        let receivers = self.receiver_pool(topo);
        let card = topo.card_i();
        if senders.iter().chain(&receivers).any(|&s| s >= card) {
            return Err(config(format!("server index out of range (|I| = {card})")));
        }
        let mut dedup = senders.clone();
        dedup.sort_unstable();
        dedup.dedup();
        if dedup.len() != senders.len() {
            return Err(config("duplicate server in incast sender pool"));
        }
        if self.fan_in > senders.len() {
            return Err(config(format!(
                "fan-in {} exceeds the {} eligible senders",
                self.fan_in,
                senders.len()
            )));
        }
        let shared = receivers.iter().filter(|r| senders.contains(r)).count();
        if receivers.len() <= shared.min(self.fan_in) {
            return Err(config("no receiver left once the senders are excluded"));
        }
        Ok(())
    }
}

impl TrafficSpec {
    pub fn validate(&self, topo: &Topology) -> Result<()> {
        if let Some(r) = &self.regular {
            r.rate_per_ns(topo)?;
            if r.fixed_size_bytes == Some(0) {
                return Err(config("fixed flow size must be > 0"));
            }
        }
        if let Some(i) = &self.incast {
            i.validate(topo)?;
        }
        if let (Some(r), Some(i)) = (&self.regular, &self.incast) {
            if let Some(ln1) = i.lambda_n1_per_ns {
                let l11 = r.rate_per_ns(topo)?;
                if l11 <= ln1 {
                    return Err(config(format!(
                        "regular rate {l11} must exceed incast rate {ln1}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pooled Poisson process of regular flows over `[0, duration)`.
/// Flow ids are provisional (the traffic index).
pub fn gen_regular_traffic<R: Rng>(
    spec: &RegularSpec,
    topo: &Topology,
    duration_ns: f64,
    rng: &mut R,
) -> Result<Vec<FlowArrival>> {
    let rate = spec.rate_per_ns(topo)?;
    let mut out = Vec::new();
    if rate == 0.0 {
        return Ok(out);
    }
    let card = topo.card_i();
    let cdf = spec.size_cdf();
    let mut t = 0.0;
    loop {
        t += sample_exponential(rate, rng)?;
        if t >= duration_ns {
            break;
        }
        let sip = rng.random_range(0..card);
        let mut dip = rng.random_range(0..card - 1);
        if dip >= sip {
            dip += 1;
        }
        let size = spec.sample_size(&cdf, rng);
        let idx = out.len() as u64;
        out.push(FlowArrival {
            key: FlowKey { flow_id: idx, sip, dip },
            t_arrival: TimeNs::new(t)?,
            size_bytes: size,
            truth: GroundTruth::Regular { traffic_index: idx },
        });
    }
    Ok(out)
}

/// One group of `fan_in` flows per incast start, sorted by arrival inside
/// each group.
pub fn gen_incast_traffic<R: Rng>(
    spec: &IncastSpec,
    topo: &Topology,
    duration_ns: f64,
    rng: &mut R,
) -> Result<Vec<FlowArrival>> {
    spec.validate(topo)?;
    let starts: Vec<f64> = match (&spec.schedule_ns, spec.lambda_n1_per_ns) {
        (Some(s), _) => s.clone(),
        (None, Some(rate)) => {
            let mut v = Vec::new();
            let mut t = 0.0;
            loop {
                t += sample_exponential(rate, rng)?;
                if t >= duration_ns {
                    break v;
                }
                v.push(t);
            }
        }
        (None, None) => unreachable!("validated"),
    };
    let scale = (spec.sigma_offset_ns > 0.0)
        .then(|| HalfNormalScale::new(spec.sigma_offset_ns))
        .transpose()?;
    let senders = spec.sender_pool(topo);
    let receivers = spec.receiver_pool(topo);
    let n = spec.fan_in;

    let mut out = Vec::with_capacity(starts.len() * n);
    for (i, &t_star) in starts.iter().enumerate() {
        let chosen: Vec<ServerId> = sample_indices(rng, senders.len(), n)
            .into_iter()
            .map(|k| senders[k])
            .collect();
        let eligible: Vec<ServerId> =
            receivers.iter().copied().filter(|r| !chosen.contains(r)).collect();
        let dip = eligible[rng.random_range(0..eligible.len())];
        let mut flows: Vec<(f64, ServerId)> = chosen
            .into_iter()
            .map(|sip| {
                let offset = scale.map_or(0.0, |s| sample_half_normal(s, rng));
                (t_star + offset, sip)
            })
            .collect();
        flows.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (j, (t, sip)) in flows.into_iter().enumerate() {
            out.push(FlowArrival {
                key: FlowKey { flow_id: out.len() as u64, sip, dip },
                t_arrival: TimeNs::new(t)?,
                size_bytes: spec.flow_size_bytes,
                truth: GroundTruth::Incast {
                    traffic_index: i as u64,
                    flow_index: j as u32 + 1,
                    flow_count: n as u32,
                    ideal_arrival: TimeNs::new(t_star)?,
                },
            });
        }
    }
    Ok(out)
}

/// Regular and incast arrivals merged in time order with final flow ids.
/// The two classes draw from independent streams of `seed`.
pub fn generate_flows(
    spec: &TrafficSpec,
    topo: &Topology,
    duration_ns: f64,
    seed: u64,
) -> Result<Vec<FlowArrival>> {
    spec.validate(topo)?;
    let mut flows = Vec::new();
    if let Some(r) = &spec.regular {
        let mut rng = seeded_rng(seed, REGULAR_STREAM);
        flows.extend(gen_regular_traffic(r, topo, duration_ns, &mut rng)?);
    }
    if let Some(i) = &spec.incast {
        let mut rng = seeded_rng(seed, INCAST_STREAM);
        flows.extend(gen_incast_traffic(i, topo, duration_ns, &mut rng)?);
    }
    flows.sort_by(|a, b| a.t_arrival.cmp(&b.t_arrival));
    for (id, f) in flows.iter_mut().enumerate() {
        f.key.flow_id = id as u64;
    }
    Ok(flows)
}
