//! The IDSO aggregation LP: assembly, solution with normalized duals, KKT checks and
//! qualification prices.
//!
//! Columns are `α` per DER followed by `P` and `Q` for every present line-phase. Absent
//! phases get no column and read back as zero.
//!
//! Dual normalization (backend convention `c = Aᵀy + z`):
//! `λ = y` on balance rows, `μ̄ = −y` on upper-voltage rows, `μ = y` on lower-voltage rows,
//! `μ^P = −y` and `μ^sub = −y` on polygon rows. With these signs
//! `Cλ^p = ∇C_IDSO + 2D_rᵀC⁻ᵀ(μ̄ − μ) + Σ_e β_e μ^P_e + Σ_e β_e c0 μ^sub_e`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::der::{gamma_price, per_phase_injection, Der, DerPopulation, Side};
use crate::error::{Error, Result};
use crate::lindistflow::NetworkMatrices;
use crate::lp::{HighsSolver, LinearProgram, LpSolution, LpSolver, LpStatus};
use crate::network::Network;
use crate::polygon::{polygon_coefficients, PolygonApprox, DEFAULT_EDGES};

/// Threshold separating zero from nonzero dispatch fractions.
pub const ALPHA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TdopfParams {
    /// Marginal network cost, ¢/kWh.
    pub m: f64,
    /// Operating period, hours.
    pub dt: f64,
    /// Offer preference constant, ¢.
    pub big_m: f64,
    pub polygon: PolygonApprox,
}

impl Default for TdopfParams {
    fn default() -> Self {
        TdopfParams {
            m: 2.5,
            dt: 1.0,
            big_m: 1000.0,
            polygon: polygon_coefficients(DEFAULT_EDGES).expect("12 edges"),
        }
    }
}

impl TdopfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m >= 0.0) || !self.m.is_finite() {
            return Err(Error::Config(format!("m must be >= 0, got {}", self.m)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.big_m > 0.0) || !self.big_m.is_finite() {
            return Err(Error::Config(format!("big_m must be > 0, got {}", self.big_m)));
        }
        Ok(())
    }
}

/// Clamped fractions and the optional zero-net-volume group.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Restrictions {
    pub clamps: Vec<Option<f64>>,
    pub net_zero: Vec<usize>,
}

impl Restrictions {
    pub fn none(n_ders: usize) -> Self {
        Restrictions {
            clamps: vec![None; n_ders],
            net_zero: Vec::new(),
        }
    }

    pub fn clamp(mut self, der: usize, value: f64) -> Self {
        self.clamps[der] = Some(value);
        self
    }

    /// Clamp every DER on `side` to zero.
    pub fn zero_side(mut self, population: &DerPopulation, side: Side) -> Self {
        for i in population.indices(side) {
            self.clamps[i] = Some(0.0);
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowFamily {
    BalanceP,
    BalanceQ,
    VoltageUpper,
    VoltageLower,
    LinePolygon,
    SubstationPolygon,
    Clamp,
    NetZero,
}

impl RowFamily {
    fn is_inequality(self) -> bool {
        matches!(
            self,
            RowFamily::VoltageUpper | RowFamily::VoltageLower | RowFamily::LinePolygon | RowFamily::SubstationPolygon
        )
    }

    fn relaxable(self) -> bool {
        !matches!(self, RowFamily::BalanceP | RowFamily::BalanceQ)
    }

    pub fn label(self) -> &'static str {
        match self {
            RowFamily::BalanceP => "real power balance",
            RowFamily::BalanceQ => "reactive power balance",
            RowFamily::VoltageUpper => "upper voltage limits",
            RowFamily::VoltageLower => "lower voltage limits",
            RowFamily::LinePolygon => "line apparent-power limits",
            RowFamily::SubstationPolygon => "substation apparent-power limits",
            RowFamily::Clamp => "clamped dispatch fractions",
            RowFamily::NetZero => "zero net volume",
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Layout {
    alpha: Vec<usize>,
    p: Vec<Option<usize>>,
    q: Vec<Option<usize>>,
    bal_p: Vec<Option<usize>>,
    bal_q: Vec<Option<usize>>,
    v_up: Vec<Option<usize>>,
    v_lo: Vec<Option<usize>>,
    line: Vec<Vec<Option<usize>>>,
    sub: Vec<[Option<usize>; 3]>,
    clamp: Vec<Option<usize>>,
    net_zero: Option<usize>,
    families: Vec<RowFamily>,
}

/// An assembled aggregation problem. Immutable once built.
#[derive(Debug, Clone)]
pub struct TdopfProblem<'a> {
    network: &'a Network,
    matrices: &'a NetworkMatrices,
    population: &'a DerPopulation,
    params: TdopfParams,
    restrictions: Restrictions,
    lp: LinearProgram,
    layout: Layout,
    /// `2·C⁻¹·D_r` and `2·C⁻¹·D_x`.
    g_r: DMatrix<f64>,
    g_x: DMatrix<f64>,
}

fn push_row(lp: &mut LinearProgram, fam: &mut Vec<RowFamily>, f: RowFamily, lo: f64, hi: f64, e: Vec<(usize, f64)>) -> usize {
    fam.push(f);
    lp.add_row(lo, hi, e)
}

impl<'a> TdopfProblem<'a> {
    pub fn assemble(
        network: &'a Network,
        matrices: &'a NetworkMatrices,
        population: &'a DerPopulation,
        params: TdopfParams,
        restrictions: Restrictions,
    ) -> Result<Self> {
        params.validate()?;
        let n = network.n();
        let dim = 3 * n;
        if matrices.dim() != dim {
            return Err(Error::Schema(format!(
                "network matrices have dimension {} but the network needs {dim}",
                matrices.dim()
            )));
        }
        let nd = population.len();
        let mut restrictions = restrictions;
        if restrictions.clamps.is_empty() {
            restrictions.clamps = vec![None; nd];
        }
        if restrictions.clamps.len() != nd {
            return Err(Error::Schema(format!(
                "{} clamp entries for {nd} DERs",
                restrictions.clamps.len()
            )));
        }
        for v in restrictions.clamps.iter().flatten() {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::Domain(format!("clamp value {v} outside [0, 1]")));
            }
        }
        if let Some(&bad) = restrictions.net_zero.iter().find(|&&i| i >= nd) {
            return Err(Error::Schema(format!("net-zero group references DER {bad} of {nd}")));
        }
        for i in 0..nd {
            if population.block(i) >= n {
                return Err(Error::Schema(format!("DER {} is outside the network", population.ders()[i].id)));
            }
        }

        let s_base = network.s_base_kva();
        let (m, dt) = (params.m, params.dt);
        let mut lp = LinearProgram::default();
        let mut lay = Layout::default();

        for der in population.ders() {
            let cost = gamma_price(der, params.big_m) * der.volume * dt;
            lay.alpha.push(lp.add_column(cost, 0.0, 1.0));
        }
        let present = |i: usize| network.block_has_phase(i / 3, i % 3);
        let head_cost: Vec<f64> = (0..dim)
            .map(|r| m * s_base * dt * (0..3).map(|ph| matrices.c0[(r, ph)]).sum::<f64>())
            .collect();
        for i in 0..dim {
            lay.p.push(present(i).then(|| lp.add_column(head_cost[i], f64::NEG_INFINITY, f64::INFINITY)));
        }
        for i in 0..dim {
            lay.q.push(present(i).then(|| lp.add_column(0.0, f64::NEG_INFINITY, f64::INFINITY)));
        }

        let fixed_p = network.fixed_p();
        let fixed_q = network.fixed_q();
        let injections: Vec<[f64; 3]> = population.ders().iter().map(|d| per_phase_injection(d, s_base)).collect();
        let fam = &mut lay.families;

        // Balance: Cᵀ·P − Σ A·p·α = p^f, and the same for Q with η.
        for (flows, fixed, reactive, out, family) in [
            (&lay.p, &fixed_p, false, &mut lay.bal_p, RowFamily::BalanceP),
            (&lay.q, &fixed_q, true, &mut lay.bal_q, RowFamily::BalanceQ),
        ] {
            for j in 0..dim {
                if !present(j) {
                    out.push(None);
                    continue;
                }
                let mut e: Vec<(usize, f64)> = (0..dim)
                    .filter(|&r| matrices.c[(r, j)] != 0.0)
                    .filter_map(|r| flows[r].map(|col| (col, matrices.c[(r, j)])))
                    .collect();
                for (d, inj) in injections.iter().enumerate() {
                    if population.block(d) == j / 3 && inj[j % 3] != 0.0 {
                        let scale = if reactive { population.eta()[d] } else { 1.0 };
                        if scale != 0.0 {
                            e.push((lay.alpha[d], -inj[j % 3] * scale));
                        }
                    }
                }
                out.push(Some(push_row(&mut lp, fam, family, fixed[j], fixed[j], e)));
            }
        }

        // Voltage: v0 + 2C⁻¹(D_r P + D_x Q) within [v_min, v_max].
        let g_r = &matrices.c_inv * &matrices.d_r * 2.0;
        let g_x = &matrices.c_inv * &matrices.d_x * 2.0;
        let (v0, vmin, vmax) = (network.v0(), network.v_min(), network.v_max());
        let voltage_entries = |i: usize| -> Vec<(usize, f64)> {
            let mut e = Vec::new();
            for j in 0..dim {
                if let Some(col) = lay.p[j] {
                    if g_r[(i, j)] != 0.0 {
                        e.push((col, g_r[(i, j)]));
                    }
                }
            }
            for j in 0..dim {
                if let Some(col) = lay.q[j] {
                    if g_x[(i, j)] != 0.0 {
                        e.push((col, g_x[(i, j)]));
                    }
                }
            }
            e
        };
        for i in 0..dim {
            if !present(i) {
                lay.v_up.push(None);
                lay.v_lo.push(None);
                continue;
            }
            let e = voltage_entries(i);
            let ph = i % 3;
            lay.v_up.push(Some(push_row(&mut lp, fam, RowFamily::VoltageUpper, f64::NEG_INFINITY, vmax[ph] - v0[ph], e.clone())));
            lay.v_lo.push(Some(push_row(&mut lp, fam, RowFamily::VoltageLower, vmin[ph] - v0[ph], f64::INFINITY, e)));
        }

        // Polygons on every present line-phase and on the head injection.
        let head_lines: Vec<Vec<usize>> = (0..3)
            .map(|ph| (0..dim).filter(|&r| matrices.c0[(r, ph)] != 0.0 && lay.p[r].is_some()).collect())
            .collect();
        let s0 = network.s0_max();
        for edge in params.polygon.edges() {
            let mut rows = Vec::with_capacity(dim);
            for i in 0..dim {
                rows.push(match (lay.p[i], lay.q[i]) {
                    (Some(pc), Some(qc)) => {
                        let s = network.lines()[i / 3].s_max[i % 3];
                        Some(push_row(
                            &mut lp,
                            fam,
                            RowFamily::LinePolygon,
                            f64::NEG_INFINITY,
                            -edge.gamma * s,
                            vec![(pc, edge.beta), (qc, edge.delta)],
                        ))
                    }
                    _ => None,
                });
            }
            lay.line.push(rows);
            let mut sub = [None; 3];
            for ph in 0..3 {
                if head_lines[ph].is_empty() {
                    continue;
                }
                let mut e = Vec::new();
                for &r in &head_lines[ph] {
                    let c = matrices.c0[(r, ph)];
                    e.push((lay.p[r].unwrap(), edge.beta * c));
                    e.push((lay.q[r].unwrap(), edge.delta * c));
                }
                sub[ph] = Some(push_row(&mut lp, fam, RowFamily::SubstationPolygon, f64::NEG_INFINITY, -edge.gamma * s0[ph], e));
            }
            lay.sub.push(sub);
        }

        for (i, clamp) in restrictions.clamps.iter().enumerate() {
            lay.clamp.push(clamp.map(|v| push_row(&mut lp, fam, RowFamily::Clamp, v, v, vec![(lay.alpha[i], 1.0)])));
        }
        if !restrictions.net_zero.is_empty() {
            let e = restrictions
                .net_zero
                .iter()
                .map(|&i| (lay.alpha[i], population.ders()[i].volume))
                .collect();
            lay.net_zero = Some(push_row(&mut lp, fam, RowFamily::NetZero, 0.0, 0.0, e));
        }

        Ok(TdopfProblem {
            network,
            matrices,
            population,
            params,
            restrictions,
            lp,
            layout: lay,
            g_r,
            g_x,
        })
    }

    pub fn network(&self) -> &Network {
        self.network
    }

    pub fn population(&self) -> &DerPopulation {
        self.population
    }

    pub fn params(&self) -> &TdopfParams {
        &self.params
    }

    pub fn restrictions(&self) -> &Restrictions {
        &self.restrictions
    }

    pub fn linear_program(&self) -> &LinearProgram {
        &self.lp
    }

    pub fn row_families(&self) -> &[RowFamily] {
        &self.layout.families
    }

    /// Largest objective coefficient magnitude, at least 1; used to scale residuals.
    pub fn cost_scale(&self) -> f64 {
        self.lp.cost.iter().fold(1.0f64, |a, c| a.max(c.abs()))
    }

    pub fn solve(&self) -> Result<TdopfSolution> {
        self.solve_with(&HighsSolver)
    }

    pub fn solve_with(&self, solver: &dyn LpSolver) -> Result<TdopfSolution> {
        let raw = solver.solve(&self.lp)?;
        match raw.status {
            LpStatus::Optimal => Ok(self.extract(raw)),
            status => {
                let hint = if status == LpStatus::Infeasible {
                    Some(self.infeasibility_hint(solver)?)
                } else {
                    None
                };
                Ok(TdopfSolution::empty(status, self.network.n(), self.population.len(), self.params.polygon.len(), hint))
            }
        }
    }

    /// Families whose relaxation alone restores feasibility.
    fn infeasibility_hint(&self, solver: &dyn LpSolver) -> Result<String> {
        let families = [
            RowFamily::VoltageUpper,
            RowFamily::VoltageLower,
            RowFamily::LinePolygon,
            RowFamily::SubstationPolygon,
            RowFamily::Clamp,
            RowFamily::NetZero,
        ];
        let mut culprits = Vec::new();
        for f in families {
            if !self.layout.families.contains(&f) || !f.relaxable() {
                continue;
            }
            let mut relaxed = self.lp.clone();
            for (row, fam) in relaxed.rows.iter_mut().zip(&self.layout.families) {
                if *fam == f {
                    row.lower = f64::NEG_INFINITY;
                    row.upper = f64::INFINITY;
                }
            }
            if solver.solve(&relaxed)?.status == LpStatus::Optimal {
                culprits.push(f.label());
            }
        }
        Ok(if culprits.is_empty() {
            "no single constraint family explains the conflict".into()
        } else {
            format!("binding families: {}", culprits.join(", "))
        })
    }

    fn extract(&self, raw: LpSolution) -> TdopfSolution {
        let lay = &self.layout;
        let n = self.network.n();
        let dim = 3 * n;
        let y = &raw.row_duals;
        let col = |c: &Option<usize>| c.map_or(0.0, |c| raw.x[c]);
        let dual = |r: &Option<usize>, sign: f64| r.map_or(0.0, |r| sign * y[r]);

        let p_flows = DVector::from_iterator(dim, lay.p.iter().map(col));
        let q_flows = DVector::from_iterator(dim, lay.q.iter().map(col));
        let v0 = self.network.v0();
        let drop = &self.g_r * &p_flows + &self.g_x * &q_flows;
        let voltages = DVector::from_fn(dim, |i, _| v0[i % 3] + drop[i]);
        let p0v = self.matrices.c0.transpose() * &p_flows;
        let q0v = self.matrices.c0.transpose() * &q_flows;

        TdopfSolution {
            status: LpStatus::Optimal,
            alpha: lay.alpha.iter().map(|&c| raw.x[c].clamp(0.0, 1.0)).collect(),
            p_flows,
            q_flows,
            voltages,
            p0: [p0v[0], p0v[1], p0v[2]],
            q0: [q0v[0], q0v[1], q0v[2]],
            objective: raw.objective,
            lambda_p: DVector::from_iterator(dim, lay.bal_p.iter().map(|r| dual(r, 1.0))),
            lambda_q: DVector::from_iterator(dim, lay.bal_q.iter().map(|r| dual(r, 1.0))),
            mu_v_upper: DVector::from_iterator(dim, lay.v_up.iter().map(|r| dual(r, -1.0))),
            mu_v_lower: DVector::from_iterator(dim, lay.v_lo.iter().map(|r| dual(r, 1.0))),
            mu_line: lay
                .line
                .iter()
                .map(|rows| DVector::from_iterator(dim, rows.iter().map(|r| dual(r, -1.0))))
                .collect(),
            mu_sub: lay.sub.iter().map(|rows| rows.map(|r| dual(&r, -1.0))).collect(),
            nu_clamp: lay.clamp.iter().map(|r| dual(r, 1.0)).collect(),
            nu_net_zero: dual(&lay.net_zero, 1.0),
            infeasibility_hint: None,
            raw: Some(raw),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdopfSolution {
    pub status: LpStatus,
    pub alpha: Vec<f64>,
    pub p_flows: DVector<f64>,
    pub q_flows: DVector<f64>,
    /// Squared voltages of the non-head buses, p.u.².
    pub voltages: DVector<f64>,
    pub p0: [f64; 3],
    pub q0: [f64; 3],
    /// ¢.
    pub objective: f64,
    /// Active nodal qualification prices, ¢ per p.u.
    pub lambda_p: DVector<f64>,
    pub lambda_q: DVector<f64>,
    pub mu_v_upper: DVector<f64>,
    pub mu_v_lower: DVector<f64>,
    /// One 3N vector per polygon edge.
    pub mu_line: Vec<DVector<f64>>,
    pub mu_sub: Vec<[f64; 3]>,
    pub nu_clamp: Vec<f64>,
    pub nu_net_zero: f64,
    pub infeasibility_hint: Option<String>,
    raw: Option<LpSolution>,
}

impl TdopfSolution {
    fn empty(status: LpStatus, n: usize, nd: usize, edges: usize, hint: Option<String>) -> Self {
        let z = || DVector::zeros(3 * n);
        TdopfSolution {
            status,
            alpha: vec![0.0; nd],
            p_flows: z(),
            q_flows: z(),
            voltages: z(),
            p0: [0.0; 3],
            q0: [0.0; 3],
            objective: f64::NAN,
            lambda_p: z(),
            lambda_q: z(),
            mu_v_upper: z(),
            mu_v_lower: z(),
            mu_line: vec![z(); edges],
            mu_sub: vec![[0.0; 3]; edges],
            nu_clamp: vec![0.0; nd],
            nu_net_zero: 0.0,
            infeasibility_hint: hint,
            raw: None,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn is_dispatched(&self, der: usize) -> bool {
        self.alpha[der] > ALPHA_EPS
    }

    /// Duals at the DER's bus, one per phase.
    pub fn bus_duals(&self, population: &DerPopulation, der: usize) -> ([f64; 3], [f64; 3]) {
        let k = population.block(der);
        let pick = |v: &DVector<f64>| [v[3 * k], v[3 * k + 1], v[3 * k + 2]];
        (pick(&self.lambda_p), pick(&self.lambda_q))
    }

    pub fn qualification_price(&self, population: &DerPopulation, der: usize, params: &TdopfParams, s_base_kva: f64) -> f64 {
        let (lp, lq) = self.bus_duals(population, der);
        qualification_price(&population.ders()[der], lp, lq, params.big_m, s_base_kva, params.dt)
    }

    /// Errors unless the solve was optimal.
    pub fn require_optimal(&self, context: &str) -> Result<()> {
        match self.status {
            LpStatus::Optimal => Ok(()),
            LpStatus::Infeasible => Err(Error::Infeasible {
                context: context.into(),
                hint: self.infeasibility_hint.clone().unwrap_or_default(),
            }),
            LpStatus::Unbounded => Err(Error::Solver(format!("{context} is unbounded"))),
        }
    }
}

/// `Σ_φ (−λ^p − η·λ^q) / (N_φ·s_base·Δt)` over the DER's phases, plus `M/p` for offers.
pub fn qualification_price(der: &Der, lambda_p: [f64; 3], lambda_q: [f64; 3], big_m: f64, s_base_kva: f64, dt: f64) -> f64 {
    let eta = der.eta();
    let n_phi = der.phases.len() as f64;
    let sum: f64 = der
        .phases
        .iter()
        .map(|ph| -lambda_p[ph.index()] - eta * lambda_q[ph.index()])
        .sum();
    let base = sum / (n_phi * s_base_kva * dt);
    match der.side() {
        Side::Bid => base,
        Side::Offer => base + big_m / der.volume,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity_p: f64,
    pub stationarity_q: f64,
    pub stationarity_alpha: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity_p.max(self.stationarity_q).max(self.stationarity_alpha)
    }
}

/// Scaled max-norm residuals of the stationarity identities, assembled from the duals and the
/// network matrices rather than from the LP rows.
pub fn kkt_residuals(solution: &TdopfSolution, problem: &TdopfProblem) -> Result<KktResiduals> {
    if !solution.is_optimal() {
        return Err(Error::State("KKT residuals need an optimal solution".into()));
    }
    let mx = problem.matrices;
    let net = problem.network;
    let params = &problem.params;
    let dim = 3 * net.n();
    let s_base = net.s_base_kva();
    let scale = problem.cost_scale();

    let ones = DVector::from_element(3, 1.0);
    let grad = &mx.c0 * &ones * (params.m * s_base * params.dt);
    let dmu = &solution.mu_v_upper - &solution.mu_v_lower;
    let cinv_t_dmu = mx.c_inv.transpose() * &dmu;
    let mut line_beta = DVector::zeros(dim);
    let mut line_delta = DVector::zeros(dim);
    let mut sub_beta = [0.0; 3];
    let mut sub_delta = [0.0; 3];
    for (e, edge) in params.polygon.edges().iter().enumerate() {
        line_beta += &solution.mu_line[e] * edge.beta;
        line_delta += &solution.mu_line[e] * edge.delta;
        for ph in 0..3 {
            sub_beta[ph] += edge.beta * solution.mu_sub[e][ph];
            sub_delta[ph] += edge.delta * solution.mu_sub[e][ph];
        }
    }
    let sb = DVector::from_column_slice(&sub_beta);
    let sd = DVector::from_column_slice(&sub_delta);

    let rp = &mx.c * &solution.lambda_p - grad - mx.d_r.transpose() * &cinv_t_dmu * 2.0 - line_beta - &mx.c0 * sb;
    let rq = &mx.c * &solution.lambda_q - mx.d_x.transpose() * &cinv_t_dmu * 2.0 - line_delta - &mx.c0 * sd;
    let present = |i: &usize| net.block_has_phase(*i / 3, *i % 3);
    let stationarity_p = (0..dim).filter(present).fold(0.0f64, |a, i| a.max(rp[i].abs())) / scale;
    let stationarity_q = (0..dim).filter(present).fold(0.0f64, |a, i| a.max(rq[i].abs())) / scale;

    let pop = problem.population;
    let mut stationarity_alpha = 0.0f64;
    for (i, der) in pop.ders().iter().enumerate() {
        if problem.restrictions.clamps[i].is_some() {
            continue;
        }
        let inj = per_phase_injection(der, s_base);
        let (lp, lq) = solution.bus_duals(pop, i);
        let eta = pop.eta()[i];
        let mut d = gamma_price(der, params.big_m) * der.volume * params.dt;
        for ph in 0..3 {
            d += inj[ph] * (lp[ph] + eta * lq[ph]);
        }
        if problem.restrictions.net_zero.contains(&i) {
            d -= der.volume * solution.nu_net_zero;
        }
        let a = solution.alpha[i];
        let r = if a <= ALPHA_EPS {
            (-d).max(0.0)
        } else if a >= 1.0 - ALPHA_EPS {
            d.max(0.0)
        } else {
            d.abs()
        };
        stationarity_alpha = stationarity_alpha.max(r / scale);
    }
    Ok(KktResiduals {
        stationarity_p,
        stationarity_q,
        stationarity_alpha,
    })
}

/// Dual feasibility and complementary slackness over the inequality rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlacknessReport {
    /// Most negative normalized inequality multiplier (0 if none is negative).
    pub min_multiplier: f64,
    /// Largest `|μ|·slack`, scaled like the stationarity residuals.
    pub max_complementarity: f64,
}

pub fn complementary_slackness(solution: &TdopfSolution, problem: &TdopfProblem) -> Result<SlacknessReport> {
    let raw = match (&solution.raw, solution.status) {
        (Some(raw), LpStatus::Optimal) => raw,
        _ => return Err(Error::State("complementary slackness needs an optimal solution".into())),
    };
    let scale = problem.cost_scale();
    let activity = problem.lp.row_activity(&raw.x);
    let mut min_multiplier = 0.0f64;
    let mut max_complementarity = 0.0f64;
    for (r, (row, fam)) in problem.lp.rows.iter().zip(&problem.layout.families).enumerate() {
        if !fam.is_inequality() {
            continue;
        }
        let (mu, slack) = if row.upper.is_finite() {
            (-raw.row_duals[r], row.upper - activity[r])
        } else {
            (raw.row_duals[r], activity[r] - row.lower)
        };
        min_multiplier = min_multiplier.min(mu / scale);
        max_complementarity = max_complementarity.max((mu * slack).abs() / scale);
    }
    Ok(SlacknessReport {
        min_multiplier,
        max_complementarity,
    })
}

/// Net non-head injections `(p, q)` in p.u. for the given fractions, fixed injections included.
pub fn net_injections(network: &Network, population: &DerPopulation, alpha: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let mut p = network.fixed_p();
    let mut q = network.fixed_q();
    let s_base = network.s_base_kva();
    for (i, der) in population.ders().iter().enumerate() {
        let inj = per_phase_injection(der, s_base);
        let k = population.block(i);
        for ph in 0..3 {
            p[3 * k + ph] += alpha[i] * inj[ph];
            q[3 * k + ph] += alpha[i] * inj[ph] * population.eta()[i];
        }
    }
    (p, q)
}

/// Whether DER `i`'s fraction is clamped in this problem.
pub fn is_clamped(problem: &TdopfProblem, i: usize) -> bool {
    problem.restrictions.clamps[i].is_some()
}
