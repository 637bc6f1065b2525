//! Simulation trace records and their JSON-lines form.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::didie::Verdict;
use crate::error::{config, Result};
use crate::model::ServerId;
use crate::time::TimeNs;

use super::topology::PortId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    FlowStart,
    Enqueue,
    Dequeue,
    Drop,
    Verdict,
    Detection,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::FlowStart => "flow_start",
            TraceKind::Enqueue => "enqueue",
            TraceKind::Dequeue => "dequeue",
            TraceKind::Drop => "drop",
            TraceKind::Verdict => "verdict",
            TraceKind::Detection => "detection",
        }
    }

    /// Packet-level kinds, which detectors must never influence.
    pub fn is_packet_level(self) -> bool {
        !matches!(self, TraceKind::Verdict | TraceKind::Detection)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Didie,
    Qlen,
    Qgrad,
}

impl DetectorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Didie => "didie",
            DetectorKind::Qlen => "qlen",
            DetectorKind::Qgrad => "qgrad",
        }
    }
}

impl FromStr for DetectorKind {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "didie" => Ok(DetectorKind::Didie),
            "qlen" => Ok(DetectorKind::Qlen),
            "qgrad" => Ok(DetectorKind::Qgrad),
            _ => Err(config(format!("unknown detector kind `{s}`"))),
        }
    }
}

impl Serialize for PortId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PortId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One trace line. Which optional fields are present depends on `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    #[serde(rename = "t_ns")]
    pub t: TimeNs,
    pub seq: u64,
    pub kind: TraceKind,
    pub port: PortId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sip: Option<ServerId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dip: Option<ServerId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revised: Option<bool>,
}

impl TraceEvent {
    pub fn new(t: TimeNs, seq: u64, kind: TraceKind, port: PortId) -> Self {
        TraceEvent {
            t,
            seq,
            kind,
            port,
            flow_id: None,
            sip: None,
            dip: None,
            bytes: None,
            queue_bytes: None,
            detector: None,
            verdict: None,
            revised: None,
        }
    }

    /// JSON object on one line, with the time printed to three decimals.
    pub fn to_json_line(&self) -> String {
        let mut s = String::with_capacity(128);
        write!(
            s,
            "{{\"t_ns\":{:.3},\"seq\":{},\"kind\":\"{}\",\"port\":\"{}\"",
            self.t.ns(),
            self.seq,
            self.kind.as_str(),
            self.port
        )
        .expect("write to string");
        let mut num = |name: &str, v: Option<u64>| {
            if let Some(v) = v {
                write!(s, ",\"{name}\":{v}").expect("write to string");
            }
        };
        num("flow_id", self.flow_id);
        num("sip", self.sip.map(|x| x as u64));
        num("dip", self.dip.map(|x| x as u64));
        num("bytes", self.bytes);
        num("queue_bytes", self.queue_bytes);
        if let Some(d) = self.detector {
            write!(s, ",\"detector\":\"{}\"", d.as_str()).expect("write to string");
        }
        if let Some(v) = self.verdict {
            write!(s, ",\"verdict\":\"{}\"", v.as_str()).expect("write to string");
        }
        if let Some(r) = self.revised {
            write!(s, ",\"revised\":{r}").expect("write to string");
        }
        s.push('}');
        s
    }

    pub fn parse_json_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| config(format!("bad trace line: {e}")))
    }
}

/// Parses a whole JSON-lines trace, skipping blank lines and `#` headers.
pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            TraceEvent::parse_json_line(l).map_err(|e| config(format!("trace line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_line_format() {
        let mut e = TraceEvent::new(TimeNs::from_ns(1000.0), 7, TraceKind::Verdict, PortId::Trunk { from: 0 });
        e.flow_id = Some(3);
        e.sip = Some(1);
        e.dip = Some(5);
        e.detector = Some(DetectorKind::Didie);
        e.verdict = Some(Verdict::Incast);
        e.revised = Some(true);
        let line = e.to_json_line();
        assert_eq!(
            line,
            r#"{"t_ns":1000.000,"seq":7,"kind":"verdict","port":"sw0-sw1","flow_id":3,"sip":1,"dip":5,"detector":"didie","verdict":"incast","revised":true}"#
        );
        assert_eq!(TraceEvent::parse_json_line(&line).unwrap(), e);
    }

    #[test]
    fn absent_fields_omitted() {
        let mut e = TraceEvent::new(TimeNs::from_ns(0.1234), 0, TraceKind::Enqueue, PortId::ToHost(2));
        e.bytes = Some(1100);
        e.queue_bytes = Some(2200);
        let line = e.to_json_line();
        assert_eq!(line, r#"{"t_ns":0.123,"seq":0,"kind":"enqueue","port":"h2","bytes":1100,"queue_bytes":2200}"#);
    }

    #[test]
    fn parse_skips_headers() {
        let text = "# generated\n{\"t_ns\":1.000,\"seq\":0,\"kind\":\"drop\",\"port\":\"h0\"}\n\n";
        let t = parse_trace(text).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].kind, TraceKind::Drop);
        assert!(parse_trace("{\"t_ns\":-1.0,\"seq\":0,\"kind\":\"drop\",\"port\":\"h0\"}").is_err());
    }
}
