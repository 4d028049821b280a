//! Seeded synthetic DER populations.
//!
//! One seed feeds two ChaCha streams: stream 1 draws volumes and prices, stream 2 draws
//! buses and phases. Changing the placement rules therefore leaves the price/volume draws intact.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::der::{Der, DerPopulation};
use crate::error::{Error, Result};
use crate::network::Network;
use crate::phase::PhaseSet;

pub const POPULATION_STREAM: u64 = 1;
pub const PLACEMENT_STREAM: u64 = 2;
const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub std_dev: f64,
    pub low: f64,
    pub high: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, std_dev: f64, low: f64, high: f64) -> Result<Self> {
        let t = TruncatedNormal { mean, std_dev, low, high };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std_dev > 0.0) || !(self.low < self.high) || !self.mean.is_finite() {
            return Err(Error::Config(format!("invalid truncated normal {self:?}")));
        }
        Ok(())
    }

    /// Rejection sampling from the untruncated normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let normal = Normal::new(self.mean, self.std_dev).map_err(|e| Error::Config(e.to_string()))?;
        for _ in 0..MAX_REJECTIONS {
            let x = normal.sample(rng);
            if x >= self.low && x <= self.high {
                return Ok(x);
            }
        }
        Err(Error::Config(format!("truncation window of {self:?} is too narrow to sample")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSpec {
    pub bids: usize,
    pub offers: usize,
    /// Consumption magnitude of bids, kW.
    pub bid_volume: TruncatedNormal,
    /// Sampled offer volumes are negated into positive production, kW.
    pub offer_volume: TruncatedNormal,
    pub price: TruncatedNormal,
    pub power_factor: f64,
    pub seed: u64,
    /// Bus labels DERs may attach to; all non-head buses when empty.
    pub buses: Vec<u32>,
}

impl Default for GenerationSpec {
    fn default() -> Self {
        GenerationSpec {
            bids: 200,
            offers: 100,
            bid_volume: TruncatedNormal { mean: 20.0, std_dev: 10.0, low: 5.0, high: 45.0 },
            offer_volume: TruncatedNormal { mean: -20.0, std_dev: 10.0, low: -45.0, high: -5.0 },
            price: TruncatedNormal { mean: 15.0, std_dev: 5.0, low: 1.0, high: 25.0 },
            power_factor: 0.9,
            seed: 2023,
            buses: Vec::new(),
        }
    }
}

impl GenerationSpec {
    pub fn validate(&self) -> Result<()> {
        self.bid_volume.validate()?;
        self.offer_volume.validate()?;
        self.price.validate()?;
        if self.bid_volume.low <= 0.0 {
            return Err(Error::Config("bid volumes must be truncated above zero".into()));
        }
        if self.offer_volume.high >= 0.0 {
            return Err(Error::Config("offer volumes must be truncated below zero".into()));
        }
        if self.price.low < 0.0 {
            return Err(Error::Config("prices must be truncated at or above zero".into()));
        }
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return Err(Error::Config(format!("power factor {} outside (0, 1]", self.power_factor)));
        }
        Ok(())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws bids (ids `1..=bids`) followed by offers.
pub fn generate_ders(network: &Network, spec: &GenerationSpec) -> Result<Vec<Der>> {
    spec.validate()?;
    let eligible: Vec<(u32, PhaseSet)> = if spec.buses.is_empty() {
        network.buses().iter().skip(1).map(|b| (b.index, b.phases)).collect()
    } else {
        spec.buses
            .iter()
            .map(|&label| match network.position(label) {
                Some(pos) if pos > 0 => Ok((label, network.buses()[pos].phases)),
                _ => Err(Error::Config(format!("bus {label} is not an eligible DER location"))),
            })
            .collect::<Result<_>>()?
    };
    if eligible.is_empty() && spec.bids + spec.offers > 0 {
        return Err(Error::Config("no eligible buses for DER placement".into()));
    }

    let mut values = stream(spec.seed, POPULATION_STREAM);
    let mut placement = stream(spec.seed, PLACEMENT_STREAM);
    let mut ders = Vec::with_capacity(spec.bids + spec.offers);
    for i in 0..spec.bids + spec.offers {
        let volume = if i < spec.bids {
            -spec.bid_volume.sample(&mut values)?
        } else {
            -spec.offer_volume.sample(&mut values)?
        };
        let price = spec.price.sample(&mut values)?;
        let (bus, bus_phases) = eligible[placement.random_range(0..eligible.len())];
        let subsets = bus_phases.nonempty_subsets();
        let phases = subsets[placement.random_range(0..subsets.len())];
        ders.push(Der::new((i + 1).to_string(), bus, phases, price, volume, spec.power_factor)?);
    }
    Ok(ders)
}

pub fn generate_population(network: &Network, spec: &GenerationSpec) -> Result<DerPopulation> {
    DerPopulation::new(network, generate_ders(network, spec)?)
}
