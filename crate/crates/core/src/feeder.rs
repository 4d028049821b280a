//! `gridclear-feeder/1` documents: the on-disk feeder description in physical units.

use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Bus, Line, Network, NetworkSettings};
use crate::phase::PhaseSet;

pub const FEEDER_SCHEMA: &str = "gridclear-feeder/1";

/// A scalar applied to all three phases, or one value per phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerPhase {
    Uniform(f64),
    Phases([f64; 3]),
}

impl PerPhase {
    pub fn values(self) -> [f64; 3] {
        match self {
            PerPhase::Uniform(v) => [v; 3],
            PerPhase::Phases(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederHeader {
    pub s_base_kva: f64,
    pub v_base_kv: f64,
    /// Head-bus voltage magnitude, p.u. (squared internally).
    pub v0_pu: PerPhase,
    pub v_min_pu: PerPhase,
    pub v_max_pu: PerPhase,
    pub s0_max_kva: PerPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusRecord {
    pub index: u32,
    pub phases: PhaseSet,
    /// Fixed real injection per phase, kW; consumption is negative.
    #[serde(default = "zero3")]
    pub fixed_p_kw: [f64; 3],
    #[serde(default = "zero3")]
    pub fixed_q_kvar: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub from: u32,
    pub to: u32,
    pub phases: PhaseSet,
    pub r_ohm: [[f64; 3]; 3],
    pub x_ohm: [[f64; 3]; 3],
    /// Apparent-power limit per phase, kVA. Takes precedence over `ampacity_a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max_kva: Option<[f64; 3]>,
    /// Conductor ampacity per phase, A; converted with the line-to-neutral `v_base_kv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ampacity_a: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederDocument {
    pub schema: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub header: FeederHeader,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
}

fn zero3() -> [f64; 3] {
    [0.0; 3]
}

impl FeederDocument {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Converts to per-unit and validates the result.
    pub fn to_network(&self) -> Result<Network> {
        if self.schema != FEEDER_SCHEMA {
            return Err(Error::Schema(format!(
                "expected schema \"{FEEDER_SCHEMA}\", found \"{}\"",
                self.schema
            )));
        }
        let h = &self.header;
        if !(h.s_base_kva > 0.0) || !(h.v_base_kv > 0.0) {
            return Err(Error::Schema("s_base_kva and v_base_kv must be positive".into()));
        }
        let s_base = h.s_base_kva;
        let z_base = h.v_base_kv * h.v_base_kv * 1000.0 / s_base;
        let sq = |v: [f64; 3]| v.map(|x| x * x);
        let settings = NetworkSettings {
            s_base_kva: s_base,
            v_base_kv: h.v_base_kv,
            v0: sq(h.v0_pu.values()),
            v_min: sq(h.v_min_pu.values()),
            v_max: sq(h.v_max_pu.values()),
            s0_max: h.s0_max_kva.values().map(|s| s / s_base),
        };

        let buses = self
            .buses
            .iter()
            .map(|b| Bus {
                index: b.index,
                phases: b.phases,
                fixed_injection_p: b.fixed_p_kw.map(|p| p / s_base),
                fixed_injection_q: b.fixed_q_kvar.map(|q| q / s_base),
            })
            .collect();

        let lines = self
            .lines
            .iter()
            .map(|l| {
                let s_kva = match (l.s_max_kva, l.ampacity_a) {
                    (Some(s), _) => s,
                    (None, Some(amps)) => amps.map(|a| a * h.v_base_kv),
                    (None, None) => {
                        return Err(Error::Schema(format!(
                            "line {}-{} needs s_max_kva or ampacity_a",
                            l.from, l.to
                        )))
                    }
                };
                let mut s_max = [0.0; 3];
                for ph in l.phases.iter() {
                    s_max[ph.index()] = s_kva[ph.index()] / s_base;
                }
                if s_kva.iter().any(|s| *s < 0.0) {
                    return Err(Error::Schema(format!("line {}-{} has a negative limit", l.from, l.to)));
                }
                Ok(Line {
                    from_bus: l.from,
                    to_bus: l.to,
                    phases: l.phases,
                    r_matrix: Matrix3::from_fn(|i, j| l.r_ohm[i][j] / z_base),
                    x_matrix: Matrix3::from_fn(|i, j| l.x_ohm[i][j] / z_base),
                    s_max,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Network::new(settings, buses, lines)
    }
}

/// Reads and validates a `gridclear-feeder/1` JSON document.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc = FeederDocument::from_json(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    doc.to_network()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus_json(extra_line: &str) -> String {
        format!(
            r#"{{
  "schema": "gridclear-feeder/1",
  "header": {{"s_base_kva": 1000, "v_base_kv": 2.401, "v0_pu": 1.03, "v_min_pu": 0.95,
              "v_max_pu": 1.05, "s0_max_kva": 5000}},
  "buses": [{{"index": 0, "phases": "abc"}}, {{"index": 1, "phases": "abc"}} {extra_line}],
  "lines": [{{"from": 0, "to": 1, "phases": "abc",
             "r_ohm": [[0.1,0,0],[0,0.1,0],[0,0,0.1]],
             "x_ohm": [[0.2,0,0],[0,0.2,0],[0,0,0.2]],
             "s_max_kva": [500, 500, 500]}}]
}}"#
        )
    }

    #[test]
    fn smallest_legal_feeder() {
        let doc = FeederDocument::from_json(&two_bus_json("")).unwrap();
        let net = doc.to_network().unwrap();
        assert_eq!(net.n(), 1);
        assert!((net.v0()[0] - 1.03 * 1.03).abs() < 1e-15);
        assert!((net.lines()[0].s_max[0] - 0.5).abs() < 1e-15);
        let z_base = 2.401 * 2.401;
        assert!((net.lines()[0].r_matrix[(0, 0)] - 0.1 / z_base).abs() < 1e-15);
    }

    #[test]
    fn wrong_schema_tag() {
        let mut doc = FeederDocument::from_json(&two_bus_json("")).unwrap();
        doc.schema = "gridclear-feeder/2".into();
        assert!(matches!(doc.to_network(), Err(Error::Schema(_))));
    }

    #[test]
    fn ampacity_conversion_uses_line_to_neutral_base() {
        let mut doc = FeederDocument::from_json(&two_bus_json("")).unwrap();
        doc.lines[0].s_max_kva = None;
        doc.lines[0].ampacity_a = Some([100.0; 3]);
        let net = doc.to_network().unwrap();
        assert!((net.lines()[0].s_max[1] - 0.2401).abs() < 1e-12);
    }
}
