//! Differential retail price and quantity signals after wholesale clearing.

use serde::{Deserialize, Serialize};

use crate::der::{DerPopulation, Side};
use crate::error::{Error, Result};
use crate::pipeline::WpmOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetailSignal {
    #[serde(skip)]
    pub der: usize,
    pub der_id: String,
    pub side: Side,
    pub qualified: bool,
    /// ¢/kWh, possibly negative.
    pub retail_price_cents_per_kwh: f64,
    /// Signed kW; zero for unqualified DERs.
    pub retail_quantity_kw: f64,
    pub qualification_price_cents_per_kwh: f64,
}

/// Cleared DERs get `lmp ± m` and `α·p`; the rest get `max(lmp + m, π^QP)` for bids or
/// `min(lmp − m, π^QP)` for offers, with zero quantity.
pub fn retail_signals(
    population: &DerPopulation,
    outcome: &WpmOutcome,
    final_alpha: &[f64],
    qualification_prices: &[f64],
    m: f64,
) -> Result<Vec<RetailSignal>> {
    let nd = population.len();
    if qualification_prices.len() != nd {
        return Err(Error::State(format!(
            "{} qualification prices for {nd} DERs",
            qualification_prices.len()
        )));
    }
    if final_alpha.len() != nd {
        return Err(Error::State(format!("{} dispatch fractions for {nd} DERs", final_alpha.len())));
    }
    let cleared = outcome.all_cleared();
    let lmp = outcome.lmp;
    Ok(population
        .ders()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let qp = qualification_prices[i];
            let qualified = cleared.binary_search(&i).is_ok();
            let (price, quantity) = match (d.side(), qualified) {
                (Side::Bid, true) => (lmp + m, final_alpha[i] * d.volume),
                (Side::Offer, true) => (lmp - m, final_alpha[i] * d.volume),
                (Side::Bid, false) => ((lmp + m).max(qp), 0.0),
                (Side::Offer, false) => ((lmp - m).min(qp), 0.0),
            };
            RetailSignal {
                der: i,
                der_id: d.id.clone(),
                side: d.side(),
                qualified,
                retail_price_cents_per_kwh: price,
                retail_quantity_kw: quantity,
                qualification_price_cents_per_kwh: qp,
            }
        })
        .collect())
}
