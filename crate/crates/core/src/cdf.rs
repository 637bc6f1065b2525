//! Empirical flow-size distributions.
//!
//! File format: one `size_bytes cum_prob` pair per line, `#` starts a
//! comment, both columns strictly increasing, last probability exactly 1.
//! Sampling uses the right-continuous step inverse: the smallest listed
//! size whose cumulative probability reaches the uniform draw.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Background distribution shipped with the crate. Its mean is 120,000 B.
pub const DEFAULT_BACKGROUND_CDF: &str = include_str!("../data/hadoop_placeholder.cdf");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u64, f64)>", into = "Vec<(u64, f64)>")]
pub struct EmpiricalCdf {
    points: Vec<(u64, f64)>,
}

impl EmpiricalCdf {
    pub fn from_points(points: Vec<(u64, f64)>) -> Result<Self> {
        check_points(&points).map_err(|(i, msg)| Error::CdfParse { line: i + 1, msg })?;
        Ok(EmpiricalCdf { points })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut points: Vec<(u64, f64)> = Vec::new();
        let mut lines = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::CdfParse { line: line_no, msg: msg.to_string() };
            let mut cols = line.split_whitespace();
            let (size, prob) = match (cols.next(), cols.next(), cols.next()) {
                (Some(s), Some(p), None) => (s, p),
                _ => return Err(bad("expected `size_bytes cum_prob`")),
            };
            let size: u64 = size.parse().map_err(|_| bad("size is not a positive integer"))?;
            let prob: f64 = prob.parse().map_err(|_| bad("cumulative probability is not a number"))?;
            points.push((size, prob));
            lines.push(line_no);
        }
        if points.is_empty() {
            return Err(Error::CdfParse { line: 0, msg: "no data rows".into() });
        }
        check_points(&points).map_err(|(i, msg)| Error::CdfParse { line: lines[i], msg })?;
        Ok(EmpiricalCdf { points })
    }

    pub fn default_background() -> Self {
        Self::parse(DEFAULT_BACKGROUND_CDF).expect("bundled cdf is valid")
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn mean_bytes(&self) -> f64 {
        let mut prev = 0.0;
        let mut mean = 0.0;
        for &(size, cum) in &self.points {
            mean += size as f64 * (cum - prev);
            prev = cum;
        }
        mean
    }

    /// Smallest listed size with cumulative probability `>= u`.
    pub fn quantile(&self, u: f64) -> u64 {
        let idx = self.points.partition_point(|&(_, cum)| cum < u);
        self.points[idx.min(self.points.len() - 1)].0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        // (0, 1] so that u = 0 never selects below the first step
        let u = 1.0 - rng.random::<f64>();
        self.quantile(u)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for &(size, cum) in &self.points {
            // {:?} prints the shortest round-trip representation
            writeln!(out, "{size} {cum:?}").unwrap();
        }
        out
    }
}

impl TryFrom<Vec<(u64, f64)>> for EmpiricalCdf {
    type Error = Error;
    fn try_from(points: Vec<(u64, f64)>) -> Result<Self> {
        EmpiricalCdf::from_points(points)
    }
}

impl From<EmpiricalCdf> for Vec<(u64, f64)> {
    fn from(c: EmpiricalCdf) -> Self {
        c.points
    }
}

fn check_points(points: &[(u64, f64)]) -> std::result::Result<(), (usize, String)> {
    if points.is_empty() {
        return Err((0, "no data rows".into()));
    }
    let mut prev: Option<(u64, f64)> = None;
    for (i, &(size, cum)) in points.iter().enumerate() {
        if size == 0 {
            return Err((i, "size must be >= 1".into()));
        }
        if !(cum > 0.0 && cum <= 1.0) {
            return Err((i, format!("cumulative probability {cum} outside (0, 1]")));
        }
        if let Some((ps, pc)) = prev {
            if size <= ps {
                return Err((i, format!("sizes not increasing ({ps} then {size})")));
            }
            if cum <= pc {
                return Err((i, format!("cumulative probabilities not increasing ({pc} then {cum})")));
            }
        }
        prev = Some((size, cum));
    }
    let last = points.len() - 1;
    if points[last].1 != 1.0 {
        return Err((last, format!("final cumulative probability is {}, expected 1", points[last].1)));
    }
    Ok(())
}
