//! Distributed energy resources and their bids/offers.
//!
//! Internally a DER's `volume` is signed: negative volumes are bids (consumption), positive
//! volumes are offers (production). Documents state a positive volume plus a `side`.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::phase::PhaseSet;

pub const DERS_SCHEMA: &str = "gridclear-ders/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bid,
    Offer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Der {
    pub id: String,
    /// Label of the bus the DER connects to.
    pub bus: u32,
    pub phases: PhaseSet,
    /// ¢/kWh, non-negative.
    pub price: f64,
    /// kW, negative for bids and positive for offers.
    pub volume: f64,
    pub power_factor: f64,
}

impl Der {
    pub fn new(
        id: impl Into<String>,
        bus: u32,
        phases: PhaseSet,
        price: f64,
        volume: f64,
        power_factor: f64,
    ) -> Result<Self> {
        let der = Der {
            id: id.into(),
            bus,
            phases,
            price,
            volume,
            power_factor,
        };
        der.validate()?;
        Ok(der)
    }

    pub fn bid(id: impl Into<String>, bus: u32, phases: PhaseSet, price: f64, kw: f64, pf: f64) -> Result<Self> {
        Der::new(id, bus, phases, price, -kw.abs(), pf)
    }

    pub fn offer(id: impl Into<String>, bus: u32, phases: PhaseSet, price: f64, kw: f64, pf: f64) -> Result<Self> {
        Der::new(id, bus, phases, price, kw.abs(), pf)
    }

    fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Schema(format!("DER {} has no phases", self.id)));
        }
        if !(self.price >= 0.0) || !self.price.is_finite() {
            return Err(Error::Schema(format!("DER {} has invalid price {}", self.id, self.price)));
        }
        if self.volume == 0.0 || !self.volume.is_finite() {
            return Err(Error::Schema(format!("DER {} has invalid volume {}", self.id, self.volume)));
        }
        reactive_ratio(self.power_factor).map_err(|e| Error::Schema(format!("DER {}: {e}", self.id)))?;
        Ok(())
    }

    pub fn side(&self) -> Side {
        if self.volume < 0.0 {
            Side::Bid
        } else {
            Side::Offer
        }
    }

    pub fn is_bid(&self) -> bool {
        self.side() == Side::Bid
    }

    pub fn eta(&self) -> f64 {
        reactive_ratio(self.power_factor).expect("validated on construction")
    }
}

/// Ratio of reactive to real power at power factor `θ`: `sqrt(1/θ² − 1)`.
pub fn reactive_ratio(power_factor: f64) -> Result<f64> {
    if !(power_factor > 0.0 && power_factor <= 1.0) {
        return Err(Error::Domain(format!("power factor {power_factor} outside (0, 1]")));
    }
    Ok((1.0 / (power_factor * power_factor) - 1.0).sqrt())
}

/// Per-phase real injection in p.u.: the volume split equally over the connected phases.
pub fn per_phase_injection(der: &Der, s_base_kva: f64) -> [f64; 3] {
    let share = der.volume / (s_base_kva * der.phases.len() as f64);
    let mut out = [0.0; 3];
    for ph in der.phases.iter() {
        out[ph.index()] = share;
    }
    out
}

/// Objective price: the bid price for bids, `π − M/p` for offers.
pub fn gamma_price(der: &Der, big_m: f64) -> f64 {
    match der.side() {
        Side::Bid => der.price,
        Side::Offer => der.price - big_m / der.volume,
    }
}

/// DERs attached to a network, with the node–DER incidence and reactive ratios.
#[derive(Debug, Clone)]
pub struct DerPopulation {
    ders: Vec<Der>,
    /// Block position (bus position − 1) of each DER's bus.
    blocks: Vec<usize>,
    eta: Vec<f64>,
}

impl DerPopulation {
    pub fn new(network: &Network, ders: Vec<Der>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        let mut blocks = Vec::with_capacity(ders.len());
        for der in &ders {
            der.validate()?;
            if !ids.insert(der.id.as_str()) {
                return Err(Error::Schema(format!("duplicate DER id {}", der.id)));
            }
            let pos = network
                .position(der.bus)
                .ok_or_else(|| Error::Schema(format!("DER {} is on unknown bus {}", der.id, der.bus)))?;
            if pos == 0 {
                return Err(Error::Schema(format!("DER {} is attached to the head bus", der.id)));
            }
            let bus_phases = network.buses()[pos].phases;
            if !der.phases.is_subset_of(bus_phases) {
                return Err(Error::Schema(format!(
                    "DER {} uses phases {} but bus {} only has {}",
                    der.id, der.phases, der.bus, bus_phases
                )));
            }
            blocks.push(pos - 1);
        }
        let eta = ders.iter().map(Der::eta).collect();
        Ok(DerPopulation { ders, blocks, eta })
    }

    pub fn ders(&self) -> &[Der] {
        &self.ders
    }

    pub fn len(&self) -> usize {
        self.ders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ders.is_empty()
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    /// Non-head block index (bus position − 1) of DER `i`.
    pub fn block(&self, i: usize) -> usize {
        self.blocks[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ders.iter().position(|d| d.id == id)
    }

    pub fn indices(&self, side: Side) -> impl Iterator<Item = usize> + '_ {
        self.ders.iter().enumerate().filter(move |(_, d)| d.side() == side).map(|(i, _)| i)
    }

    /// Node–DER incidence (3N × 3|Ψ|): an identity block at each DER's bus.
    pub fn a_matrix(&self, network: &Network) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(3 * network.n(), 3 * self.ders.len());
        for (j, &k) in self.blocks.iter().enumerate() {
            for ph in 0..3 {
                a[(3 * k + ph, 3 * j + ph)] = 1.0;
            }
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerRecord {
    pub id: String,
    pub bus: u32,
    pub phases: PhaseSet,
    pub side: Side,
    pub price_cents_per_kwh: f64,
    pub volume_kw: f64,
    pub power_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DersDocument {
    pub schema: String,
    pub ders: Vec<DerRecord>,
}

impl DersDocument {
    pub fn from_ders(ders: &[Der]) -> Self {
        DersDocument {
            schema: DERS_SCHEMA.into(),
            ders: ders
                .iter()
                .map(|d| DerRecord {
                    id: d.id.clone(),
                    bus: d.bus,
                    phases: d.phases,
                    side: d.side(),
                    price_cents_per_kwh: d.price,
                    volume_kw: d.volume.abs(),
                    power_factor: d.power_factor,
                })
                .collect(),
        }
    }

    pub fn to_ders(&self) -> Result<Vec<Der>> {
        if self.schema != DERS_SCHEMA {
            return Err(Error::Schema(format!(
                "expected schema \"{DERS_SCHEMA}\", found \"{}\"",
                self.schema
            )));
        }
        self.ders
            .iter()
            .map(|r| {
                if !(r.volume_kw > 0.0) {
                    return Err(Error::Schema(format!("DER {} must have volume_kw > 0", r.id)));
                }
                let volume = match r.side {
                    Side::Bid => -r.volume_kw,
                    Side::Offer => r.volume_kw,
                };
                Der::new(r.id.clone(), r.bus, r.phases, r.price_cents_per_kwh, volume, r.power_factor)
            })
            .collect()
    }
}

pub fn load_ders(path: impl AsRef<Path>) -> Result<Vec<Der>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: DersDocument = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    doc.to_ders()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::Phase;
    use proptest::prelude::*;

    fn phases(s: &str) -> PhaseSet {
        s.parse().unwrap()
    }

    #[test]
    fn reactive_ratio_values() {
        assert_eq!(reactive_ratio(1.0).unwrap(), 0.0);
        assert!((reactive_ratio(0.9).unwrap() - 0.4843).abs() < 5e-5);
        assert!((reactive_ratio(0.5).unwrap() - 3f64.sqrt()).abs() < 1e-12);
        assert!(matches!(reactive_ratio(0.0), Err(Error::Domain(_))));
        assert!(matches!(reactive_ratio(1.01), Err(Error::Domain(_))));
        assert!(matches!(reactive_ratio(f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn per_phase_split() {
        let d = Der::bid("1", 1, phases("ab"), 15.0, 30.0, 1.0).unwrap();
        assert_eq!(per_phase_injection(&d, 1000.0), [-0.015, -0.015, 0.0]);
        let d = Der::offer("315", 85, PhaseSet::single(Phase::C), 18.6, 29.0, 0.9).unwrap();
        assert_eq!(per_phase_injection(&d, 1000.0), [0.0, 0.0, 0.029]);
        let d = Der::offer("2", 1, PhaseSet::ABC, 10.0, 45.0, 1.0).unwrap();
        for v in per_phase_injection(&d, 1000.0) {
            assert!((v - 0.015).abs() < 1e-15);
        }
    }

    #[test]
    fn gamma_examples() {
        let bid = Der::bid("b", 1, PhaseSet::ABC, 15.0, 10.0, 1.0).unwrap();
        assert_eq!(gamma_price(&bid, 1000.0), 15.0);
        let offer = Der::offer("o", 1, PhaseSet::ABC, 10.0, 20.0, 1.0).unwrap();
        assert_eq!(gamma_price(&offer, 1000.0), -40.0);
        // 18.6 - 1000/29 = (539.4 - 1000) / 29 = -460.6 / 29
        let offer = Der::offer("o2", 1, PhaseSet::ABC, 18.6, 29.0, 1.0).unwrap();
        assert!((gamma_price(&offer, 1000.0) - (-460.6 / 29.0)).abs() < 1e-12);
        assert!((gamma_price(&offer, 1000.0) + 15.8828).abs() < 1e-4);
    }

    #[test]
    fn validation() {
        assert!(Der::new("x", 1, PhaseSet::ABC, -1.0, 5.0, 1.0).is_err());
        assert!(Der::new("x", 1, PhaseSet::ABC, 1.0, 0.0, 1.0).is_err());
        assert!(Der::new("x", 1, PhaseSet::EMPTY, 1.0, 5.0, 1.0).is_err());
        assert!(Der::new("x", 1, PhaseSet::ABC, 1.0, 5.0, 0.0).is_err());
    }

    #[test]
    fn document_side_convention() {
        let doc = DersDocument {
            schema: DERS_SCHEMA.into(),
            ders: vec![DerRecord {
                id: "7".into(),
                bus: 3,
                phases: phases("c"),
                side: Side::Bid,
                price_cents_per_kwh: 12.0,
                volume_kw: 25.0,
                power_factor: 0.9,
            }],
        };
        let ders = doc.to_ders().unwrap();
        assert_eq!(ders[0].volume, -25.0);
        assert_eq!(DersDocument::from_ders(&ders), doc);
    }

    fn any_phases() -> impl Strategy<Value = PhaseSet> {
        (1u8..8).prop_map(|bits| {
            PhaseSet::from_phases(Phase::ALL.into_iter().filter(|p| bits & (1 << p.index()) != 0))
        })
    }

    proptest! {
        #[test]
        fn injection_sums_to_volume(vol in prop_oneof![-45.0f64..-5.0, 5.0f64..45.0], ph in any_phases(), s in 100.0f64..5000.0) {
            let d = Der::new("p", 1, ph, 10.0, vol, 0.9).unwrap();
            let total: f64 = per_phase_injection(&d, s).iter().sum::<f64>() * s;
            prop_assert!((total - vol).abs() <= 1e-12 * vol.abs());
        }

        #[test]
        fn offer_gamma_is_increasing(price in 0.0f64..25.0, dp in 0.01f64..5.0, vol in 5.0f64..45.0, dv in 0.01f64..5.0) {
            let m = 1000.0;
            let a = Der::offer("a", 1, PhaseSet::ABC, price, vol, 1.0).unwrap();
            let b = Der::offer("b", 1, PhaseSet::ABC, price + dp, vol, 1.0).unwrap();
            let c = Der::offer("c", 1, PhaseSet::ABC, price, vol + dv, 1.0).unwrap();
            prop_assert!(gamma_price(&b, m) > gamma_price(&a, m));
            prop_assert!(gamma_price(&c, m) > gamma_price(&a, m));
        }

        #[test]
        fn sign_partition(vol in prop_oneof![-45.0f64..-0.1, 0.1f64..45.0]) {
            let d = Der::new("p", 1, PhaseSet::ABC, 10.0, vol, 1.0).unwrap();
            prop_assert_eq!(d.is_bid(), vol < 0.0);
        }
    }
}
