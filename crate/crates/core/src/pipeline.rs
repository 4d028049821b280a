//! Bid/offer aggregation, wholesale clearing stub and ex-post rectification.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::der::{DerPopulation, Side};
use crate::error::{Error, Result};
use crate::lindistflow::{flows_from_injections, head_injection, lindistflow_voltages, NetworkMatrices};
use crate::lp::LpStatus;
use crate::network::Network;
use crate::polygon::PolygonApprox;
use crate::tdopf::{net_injections, Restrictions, TdopfParams, TdopfProblem, TdopfSolution, ALPHA_EPS};

/// Tolerance on price comparisons, ¢/kWh.
pub const PRICE_TOL: f64 = 1e-9;
/// Tolerance on constraint checks of a recomputed dispatch, p.u.
pub const DISPATCH_TOL: f64 = 1e-7;

fn nonzero(a: f64) -> bool {
    a > ALPHA_EPS
}

#[derive(Debug, Clone)]
pub struct Bins {
    /// Offers clamped to zero.
    pub a: TdopfSolution,
    /// Bids clamped to zero.
    pub b: TdopfSolution,
    /// All DERs free.
    pub c: TdopfSolution,
    /// DERs whose combined fraction differs from their single-side fraction.
    pub mc_keys: Vec<usize>,
    /// The subset of `mc_keys` with a nonzero combined fraction.
    pub psi_mc: Vec<usize>,
    sides: Vec<Side>,
}

impl Bins {
    pub fn alpha_side(&self, der: usize) -> f64 {
        self.side_solution(self.sides[der]).alpha[der]
    }

    pub fn alpha_c(&self, der: usize) -> f64 {
        self.c.alpha[der]
    }

    pub fn side_solution(&self, side: Side) -> &TdopfSolution {
        match side {
            Side::Bid => &self.a,
            Side::Offer => &self.b,
        }
    }

    pub fn is_mc(&self, der: usize) -> bool {
        self.psi_mc.contains(&der)
    }

    /// Bids priced from bin-A duals, offers from bin-B duals.
    pub fn qualification_prices(&self, population: &DerPopulation, params: &TdopfParams, s_base_kva: f64) -> Vec<f64> {
        (0..population.len())
            .map(|i| self.side_solution(self.sides[i]).qualification_price(population, i, params, s_base_kva))
            .collect()
    }
}

fn solve_checked(problem: &TdopfProblem, label: &str) -> Result<TdopfSolution> {
    let sol = problem.solve()?;
    sol.require_optimal(label)?;
    Ok(sol)
}

pub fn build_bins(
    network: &Network,
    matrices: &NetworkMatrices,
    population: &DerPopulation,
    params: &TdopfParams,
) -> Result<Bins> {
    let nd = population.len();
    let solve = |r: Restrictions, label: &str| {
        let pb = TdopfProblem::assemble(network, matrices, population, params.clone(), r)?;
        solve_checked(&pb, label)
    };
    let a = solve(Restrictions::none(nd).zero_side(population, Side::Offer), "bin A")?;
    let b = solve(Restrictions::none(nd).zero_side(population, Side::Bid), "bin B")?;
    let c = solve(Restrictions::none(nd), "bin C")?;
    let sides: Vec<Side> = population.ders().iter().map(|d| d.side()).collect();
    let mut bins = Bins {
        a,
        b,
        c,
        mc_keys: Vec::new(),
        psi_mc: Vec::new(),
        sides,
    };
    for i in 0..nd {
        if (bins.alpha_c(i) - bins.alpha_side(i)).abs() > ALPHA_EPS {
            bins.mc_keys.push(i);
            if nonzero(bins.alpha_c(i)) {
                bins.psi_mc.push(i);
            }
        }
    }
    Ok(bins)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdsoQuote {
    #[serde(skip)]
    pub der: usize,
    pub der_id: String,
    pub side: Side,
    /// ¢/kWh.
    pub price: f64,
    /// Signed kW: negative for bids.
    pub quantity_kw: f64,
}

/// Quotes at `π − markup` for bids and `π + markup` for offers, for every DER with a nonzero
/// fraction in `alpha` and not in `exclude`.
pub fn quotes_from(population: &DerPopulation, alpha: &[f64], exclude: &[usize], markup: f64) -> Vec<IdsoQuote> {
    population
        .ders()
        .iter()
        .enumerate()
        .filter(|(i, _)| nonzero(alpha[*i]) && !exclude.contains(i))
        .map(|(i, d)| IdsoQuote {
            der: i,
            der_id: d.id.clone(),
            side: d.side(),
            price: match d.side() {
                Side::Bid => d.price - markup,
                Side::Offer => d.price + markup,
            },
            quantity_kw: alpha[i] * d.volume,
        })
        .collect()
}

/// Quotes for the single-side qualified DERs of the bins; mutually contingent DERs are held back.
pub fn make_quotes(bins: &Bins, population: &DerPopulation, m: f64) -> Vec<IdsoQuote> {
    let alpha: Vec<f64> = (0..population.len()).map(|i| bins.alpha_side(i)).collect();
    quotes_from(population, &alpha, &bins.psi_mc, m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveStep {
    pub price: f64,
    pub quantity_kw: f64,
    pub cumulative_kw: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    /// Descending price.
    pub bids: Vec<CurveStep>,
    /// Ascending price.
    pub offers: Vec<CurveStep>,
}

pub fn aggregate_curves(quotes: &[IdsoQuote]) -> Curves {
    let build = |side: Side| {
        let mut q: Vec<&IdsoQuote> = quotes.iter().filter(|q| q.side == side).collect();
        match side {
            Side::Bid => q.sort_by(|a, b| b.price.total_cmp(&a.price)),
            Side::Offer => q.sort_by(|a, b| a.price.total_cmp(&b.price)),
        }
        let mut total = 0.0;
        q.into_iter()
            .map(|q| {
                total += q.quantity_kw.abs();
                CurveStep {
                    price: q.price,
                    quantity_kw: q.quantity_kw.abs(),
                    cumulative_kw: total,
                }
            })
            .collect()
    };
    Curves {
        bids: build(Side::Bid),
        offers: build(Side::Offer),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LmpSource {
    Fixed { price: f64 },
    /// Marginal supply price `intercept + slope·q` for a net purchase of `q` kW.
    Affine { intercept: f64, slope: f64 },
}

impl LmpSource {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LmpSource::Fixed { price } if price.is_finite() => Ok(()),
            LmpSource::Affine { intercept, slope } if intercept.is_finite() && slope > 0.0 && slope.is_finite() => Ok(()),
            other => Err(Error::Config(format!("invalid LMP source {other:?}"))),
        }
    }
}

fn bid_clears(quote_price: f64, lmp: f64) -> bool {
    quote_price >= lmp - PRICE_TOL
}

fn offer_clears(quote_price: f64, lmp: f64) -> bool {
    quote_price <= lmp + PRICE_TOL
}

/// Net purchase (kW) of the quotes at price `lmp`.
pub fn net_demand(quotes: &[IdsoQuote], lmp: f64) -> f64 {
    quotes
        .iter()
        .map(|q| match q.side {
            Side::Bid if bid_clears(q.price, lmp) => q.quantity_kw.abs(),
            Side::Offer if offer_clears(q.price, lmp) => -q.quantity_kw.abs(),
            _ => 0.0,
        })
        .sum()
}

/// Price where the supply curve meets the step net-demand curve.
pub fn clearing_price(quotes: &[IdsoQuote], source: &LmpSource) -> f64 {
    let (a, s) = match *source {
        LmpSource::Fixed { price } => return price,
        LmpSource::Affine { intercept, slope } => (intercept, slope),
    };
    let mut breaks: Vec<f64> = quotes.iter().map(|q| q.price).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    // Net demand minus supply is non-increasing in price; walk the constant pieces.
    let mut left = f64::NEG_INFINITY;
    for k in 0..=breaks.len() {
        let right = breaks.get(k).copied().unwrap_or(f64::INFINITY);
        let probe = match (left.is_finite(), right.is_finite()) {
            (true, true) => 0.5 * (left + right),
            (true, false) => left + 1.0,
            (false, true) => right - 1.0,
            (false, false) => 0.0,
        };
        let root = a + s * net_demand(quotes, probe);
        if root <= left {
            return left;
        }
        if root < right {
            return root;
        }
        left = right;
    }
    left
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WpmOutcome {
    pub lmp: f64,
    pub cleared_bids: Vec<usize>,
    pub cleared_offers: Vec<usize>,
    pub cleared_mc: Vec<usize>,
    /// Rectified fractions of the mutually contingent DERs that passed the cost-recovery test.
    pub alpha_hat: Vec<(usize, f64)>,
    /// kW drawn at the head bus: cleared bids minus cleared offers.
    pub scheduled_net_interchange_kw: f64,
    pub diagnostics: Vec<String>,
}

impl WpmOutcome {
    pub fn all_cleared(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .cleared_bids
            .iter()
            .chain(&self.cleared_offers)
            .chain(&self.cleared_mc)
            .copied()
            .collect();
        v.sort_unstable();
        v
    }
}

pub fn wpm_clear(quotes: &[IdsoQuote], source: &LmpSource) -> Result<WpmOutcome> {
    source.validate()?;
    let lmp = clearing_price(quotes, source);
    let mut out = WpmOutcome {
        lmp,
        ..Default::default()
    };
    for q in quotes {
        match q.side {
            Side::Bid if bid_clears(q.price, lmp) => {
                out.cleared_bids.push(q.der);
                out.scheduled_net_interchange_kw += q.quantity_kw.abs();
            }
            Side::Offer if offer_clears(q.price, lmp) => {
                out.cleared_offers.push(q.der);
                out.scheduled_net_interchange_kw -= q.quantity_kw.abs();
            }
            _ => {}
        }
    }
    out.cleared_bids.sort_unstable();
    out.cleared_offers.sort_unstable();
    Ok(out)
}

/// Cost-recovery indicator: offers `π − lmp + m`, bids `−π + lmp + m`; passes when `≤ 0`.
pub fn cost_recovery(population: &DerPopulation, der: usize, lmp: f64, m: f64) -> f64 {
    let d = &population.ders()[der];
    match d.side() {
        Side::Offer => d.price - lmp + m,
        Side::Bid => -d.price + lmp + m,
    }
}

/// Network state produced by a set of dispatch fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalDispatch {
    pub alpha: Vec<f64>,
    pub p_flows: DVector<f64>,
    pub q_flows: DVector<f64>,
    /// Squared voltages, p.u.².
    pub voltages: DVector<f64>,
    pub p0: [f64; 3],
    pub q0: [f64; 3],
    /// Head-bus withdrawal caused by DERs alone, kW.
    pub der_net_withdrawal_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageViolation {
    pub bus: u32,
    pub phase: char,
    pub voltage_pu: f64,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowViolation {
    /// `None` for the substation.
    pub from_bus: Option<u32>,
    pub to_bus: Option<u32>,
    pub phase: char,
    pub p_pu: f64,
    pub q_pu: f64,
    pub s_max_pu: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub voltage: Vec<VoltageViolation>,
    pub flow: Vec<FlowViolation>,
}

impl ViolationReport {
    pub fn is_clean(&self) -> bool {
        self.voltage.is_empty() && self.flow.is_empty()
    }

    pub fn count(&self) -> usize {
        self.voltage.len() + self.flow.len()
    }
}

/// Recomputes flows and voltages from the fractions and reports every limit violation.
pub fn dispatch_check(
    network: &Network,
    matrices: &NetworkMatrices,
    population: &DerPopulation,
    alpha: &[f64],
    polygon: &PolygonApprox,
) -> Result<(FinalDispatch, ViolationReport)> {
    if alpha.len() != population.len() {
        return Err(Error::Shape {
            expected: population.len(),
            got: alpha.len(),
        });
    }
    let (p_inj, q_inj) = net_injections(network, population, alpha);
    let p_flows = flows_from_injections(network, &p_inj)?;
    let q_flows = flows_from_injections(network, &q_inj)?;
    let voltages = lindistflow_voltages(matrices, network.v0(), &p_flows, &q_flows)?;
    let (p0, q0) = head_injection(matrices, &p_flows, &q_flows)?;

    let mut report = ViolationReport::default();
    let (vmin, vmax) = (network.v_min(), network.v_max());
    for (k, line) in network.lines().iter().enumerate() {
        for ph in line.phases.iter() {
            let i = 3 * k + ph.index();
            let v = voltages[i];
            let j = ph.index();
            if v > vmax[j] + DISPATCH_TOL || v < vmin[j] - DISPATCH_TOL {
                report.voltage.push(VoltageViolation {
                    bus: line.to_bus,
                    phase: ph.label(),
                    voltage_pu: v.max(0.0).sqrt(),
                    v_min_pu: vmin[j].sqrt(),
                    v_max_pu: vmax[j].sqrt(),
                });
            }
            let s = line.s_max[j];
            let excess = polygon.max_violation(p_flows[i], q_flows[i], s);
            if excess > DISPATCH_TOL {
                report.flow.push(FlowViolation {
                    from_bus: Some(line.from_bus),
                    to_bus: Some(line.to_bus),
                    phase: ph.label(),
                    p_pu: p_flows[i],
                    q_pu: q_flows[i],
                    s_max_pu: s,
                    excess,
                });
            }
        }
    }
    let s0 = network.s0_max();
    for j in 0..3 {
        let excess = polygon.max_violation(p0[j], q0[j], s0[j]);
        if excess > DISPATCH_TOL {
            report.flow.push(FlowViolation {
                from_bus: None,
                to_bus: None,
                phase: crate::phase::Phase::ALL[j].label(),
                p_pu: p0[j],
                q_pu: q0[j],
                s_max_pu: s0[j],
                excess,
            });
        }
    }

    let s_base = network.s_base_kva();
    let fixed_p: f64 = network.fixed_p().iter().sum();
    let der_net_withdrawal_kw = (p0.iter().sum::<f64>() + fixed_p) * s_base;
    Ok((
        FinalDispatch {
            alpha: alpha.to_vec(),
            p_flows,
            q_flows,
            voltages,
            p0,
            q0,
            der_net_withdrawal_kw,
        },
        report,
    ))
}

/// Filters the mutually contingent DERs by cost recovery, then re-solves with every cleared
/// DER held at its bin fraction, every other DER at zero, and zero net volume over the survivors.
/// An infeasible re-solve leaves them all uncleared and records a diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn expost_rectify(
    network: &Network,
    matrices: &NetworkMatrices,
    population: &DerPopulation,
    params: &TdopfParams,
    bins: &Bins,
    outcome: &WpmOutcome,
    markup: f64,
) -> Result<(WpmOutcome, Vec<f64>)> {
    let mut out = outcome.clone();
    out.cleared_mc.clear();
    out.alpha_hat.clear();
    let nd = population.len();
    let mut alpha = vec![0.0; nd];
    for &i in outcome.cleared_bids.iter().chain(&outcome.cleared_offers) {
        alpha[i] = bins.alpha_side(i);
    }
    let survivors: Vec<usize> = bins
        .psi_mc
        .iter()
        .copied()
        .filter(|&i| cost_recovery(population, i, outcome.lmp, markup) <= PRICE_TOL)
        .collect();
    if survivors.is_empty() {
        return Ok((out, alpha));
    }

    let mut r = Restrictions::none(nd);
    for i in 0..nd {
        if !survivors.contains(&i) {
            r.clamps[i] = Some(alpha[i].clamp(0.0, 1.0));
        }
    }
    r.net_zero = survivors.clone();
    let pb = TdopfProblem::assemble(network, matrices, population, params.clone(), r)?;
    let sol = pb.solve()?;
    match sol.status {
        LpStatus::Optimal => {
            for &i in &survivors {
                let a = sol.alpha[i];
                out.alpha_hat.push((i, a));
                if nonzero(a) {
                    out.cleared_mc.push(i);
                    alpha[i] = a;
                }
            }
        }
        status => out.diagnostics.push(format!(
            "ex-post rectification was {status:?} ({}); no mutually contingent DER cleared",
            sol.infeasibility_hint.unwrap_or_default()
        )),
    }
    Ok((out, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseKind {
    A,
    B,
    C,
    #[serde(rename = "test-case-1")]
    TestCase1,
    #[serde(rename = "test-case-2")]
    TestCase2,
}

impl std::str::FromStr for CaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "a" => CaseKind::A,
            "b" => CaseKind::B,
            "c" => CaseKind::C,
            "test-case-1" => CaseKind::TestCase1,
            "test-case-2" => CaseKind::TestCase2,
            _ => return Err(Error::Config(format!("unknown case \"{s}\""))),
        })
    }
}

impl std::fmt::Display for CaseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CaseKind::A => "a",
            CaseKind::B => "b",
            CaseKind::C => "c",
            CaseKind::TestCase1 => "test-case-1",
            CaseKind::TestCase2 => "test-case-2",
        })
    }
}

/// Everything a case produces up to the final dispatch.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub case: CaseKind,
    /// Bins A, B and C; absent for the single-side cases.
    pub bins: Option<Bins>,
    /// The solve of a single-side case.
    pub single: Option<TdopfSolution>,
    pub quotes: Vec<IdsoQuote>,
    pub curves: Curves,
    pub outcome: WpmOutcome,
    pub dispatch: FinalDispatch,
    pub violations: ViolationReport,
    /// Per DER, from the duals of its side's solve.
    pub qualification_prices: Vec<f64>,
    /// Cleared DERs whose own price does not cover `lmp ± m`.
    pub dissatisfied: Vec<usize>,
}

impl CaseResult {
    /// The solve whose duals price DERs on `side`.
    pub fn side_solution(&self, side: Side) -> &TdopfSolution {
        match (&self.bins, &self.single) {
            (Some(b), _) => b.side_solution(side),
            (None, Some(s)) => s,
            (None, None) => unreachable!("a case always records a solve"),
        }
    }
}

fn dissatisfied(population: &DerPopulation, cleared: &[usize], lmp: f64, m: f64) -> Vec<usize> {
    cleared
        .iter()
        .copied()
        .filter(|&i| cost_recovery(population, i, lmp, m) > PRICE_TOL)
        .collect()
}

/// Dropping market-rejected DERs from a feasible bin dispatch can still move a coupled phase past
/// its limit, so the final check is reported rather than assumed.
fn final_dispatch(
    network: &Network,
    matrices: &NetworkMatrices,
    population: &DerPopulation,
    alpha: &[f64],
    params: &TdopfParams,
    outcome: &mut WpmOutcome,
) -> Result<(FinalDispatch, ViolationReport)> {
    let (dispatch, violations) = dispatch_check(network, matrices, population, alpha, &params.polygon)?;
    if !violations.is_clean() {
        outcome.diagnostics.push(format!(
            "final dispatch violates {} voltage and {} flow limits",
            violations.voltage.len(),
            violations.flow.len()
        ));
    }
    Ok((dispatch, violations))
}

pub fn run_case(
    network: &Network,
    matrices: &NetworkMatrices,
    population: &DerPopulation,
    params: &TdopfParams,
    lmp_source: &LmpSource,
    case: CaseKind,
) -> Result<CaseResult> {
    let s_base = network.s_base_kva();
    let m = params.m;
    match case {
        CaseKind::A | CaseKind::B => {
            let keep = if case == CaseKind::A { Side::Bid } else { Side::Offer };
            let other = if keep == Side::Bid { Side::Offer } else { Side::Bid };
            let r = Restrictions::none(population.len()).zero_side(population, other);
            let pb = TdopfProblem::assemble(network, matrices, population, params.clone(), r)?;
            let sol = solve_checked(&pb, if keep == Side::Bid { "case A" } else { "case B" })?;
            let quotes = quotes_from(population, &sol.alpha, &[], m);
            let curves = aggregate_curves(&quotes);
            let mut outcome = wpm_clear(&quotes, lmp_source)?;
            let mut alpha = vec![0.0; population.len()];
            for &i in outcome.cleared_bids.iter().chain(&outcome.cleared_offers) {
                alpha[i] = sol.alpha[i];
            }
            let (dispatch, violations) = final_dispatch(network, matrices, population, &alpha, params, &mut outcome)?;
            let qps = (0..population.len())
                .map(|i| sol.qualification_price(population, i, params, s_base))
                .collect();
            Ok(CaseResult {
                case,
                bins: None,
                single: Some(sol),
                quotes,
                curves,
                outcome,
                dispatch,
                violations,
                qualification_prices: qps,
                dissatisfied: Vec::new(),
            })
        }
        CaseKind::C | CaseKind::TestCase2 => {
            let markup = if case == CaseKind::C { m } else { 0.0 };
            let bins = build_bins(network, matrices, population, params)?;
            let alpha_side: Vec<f64> = (0..population.len()).map(|i| bins.alpha_side(i)).collect();
            let quotes = quotes_from(population, &alpha_side, &bins.psi_mc, markup);
            let curves = aggregate_curves(&quotes);
            let cleared = wpm_clear(&quotes, lmp_source)?;
            let (mut outcome, alpha) = expost_rectify(network, matrices, population, params, &bins, &cleared, markup)?;
            let (dispatch, violations) = final_dispatch(network, matrices, population, &alpha, params, &mut outcome)?;
            let qps = bins.qualification_prices(population, params, s_base);
            let unhappy = if case == CaseKind::TestCase2 {
                dissatisfied(population, &outcome.all_cleared(), outcome.lmp, m)
            } else {
                Vec::new()
            };
            Ok(CaseResult {
                case,
                bins: Some(bins),
                single: None,
                quotes,
                curves,
                outcome,
                dispatch,
                violations,
                qualification_prices: qps,
                dissatisfied: unhappy,
            })
        }
        CaseKind::TestCase1 => {
            let bins = build_bins(network, matrices, population, params)?;
            let quotes = quotes_from(population, &bins.c.alpha, &[], m);
            let curves = aggregate_curves(&quotes);
            let mut outcome = wpm_clear(&quotes, lmp_source)?;
            let mut alpha = vec![0.0; population.len()];
            for &i in outcome.cleared_bids.iter().chain(&outcome.cleared_offers) {
                alpha[i] = bins.alpha_c(i);
            }
            let (dispatch, violations) = final_dispatch(network, matrices, population, &alpha, params, &mut outcome)?;
            let qps = bins.qualification_prices(population, params, s_base);
            Ok(CaseResult {
                case,
                bins: Some(bins),
                single: None,
                quotes,
                curves,
                outcome,
                dispatch,
                violations,
                qualification_prices: qps,
                dissatisfied: Vec::new(),
            })
        }
    }
}
