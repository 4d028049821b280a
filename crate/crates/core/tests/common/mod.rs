//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use gridclear::lindistflow::{build_matrices, NetworkMatrices};
use gridclear::network::{Bus, Line};
use gridclear::{Der, DerPopulation, Network, NetworkSettings, Phase, PhaseSet, TdopfParams};
use nalgebra::{Complex, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const S_BASE: f64 = 1000.0;

pub fn settings() -> NetworkSettings {
    NetworkSettings {
        s_base_kva: S_BASE,
        v_base_kv: 2.401,
        v0: [1.0; 3],
        v_min: [0.95f64.powi(2); 3],
        v_max: [1.05f64.powi(2); 3],
        s0_max: [0.3; 3],
    }
}

pub fn bus(index: u32, phases: PhaseSet, load_kw: [f64; 3]) -> Bus {
    let mut p = [0.0; 3];
    let mut q = [0.0; 3];
    for ph in phases.iter() {
        p[ph.index()] = -load_kw[ph.index()] / S_BASE;
        q[ph.index()] = -0.5 * load_kw[ph.index()] / S_BASE;
    }
    Bus {
        index,
        phases,
        fixed_injection_p: p,
        fixed_injection_q: q,
    }
}

/// Self impedance `r` (x = 2r) with mutual terms of a quarter/third, zeroed on absent phases.
pub fn line(from: u32, to: u32, phases: PhaseSet, r: f64, s_max: f64) -> Line {
    let mut rm = Matrix3::zeros();
    let mut xm = Matrix3::zeros();
    let mut s = [0.0; 3];
    for a in phases.iter() {
        s[a.index()] = s_max;
        for b in phases.iter() {
            let (i, j) = (a.index(), b.index());
            if i == j {
                rm[(i, j)] = r;
                xm[(i, j)] = 2.0 * r;
            } else {
                rm[(i, j)] = r / 4.0;
                xm[(i, j)] = r / 3.0;
            }
        }
    }
    Line {
        from_bus: from,
        to_bus: to,
        phases,
        r_matrix: rm,
        x_matrix: xm,
        s_max: s,
    }
}

pub struct Instance {
    pub network: Network,
    pub matrices: NetworkMatrices,
    pub population: DerPopulation,
}

impl Instance {
    pub fn new(network: Network, ders: Vec<Der>) -> Instance {
        let matrices = build_matrices(&network).unwrap();
        let population = DerPopulation::new(&network, ders).unwrap();
        Instance {
            network,
            matrices,
            population,
        }
    }
}

fn random_subset<R: Rng>(rng: &mut R, of: PhaseSet) -> PhaseSet {
    let subsets = of.nonempty_subsets();
    if rng.random_bool(0.5) {
        of
    } else {
        subsets[rng.random_range(0..subsets.len())]
    }
}

pub enum Sides {
    Mixed,
    Bids,
    Offers,
}

/// A random radial feeder with `2..=max_buses` buses and `1..=max_ders` DERs whose fixed-load
/// state is feasible. Impedances and limits are drawn so that voltage and flow limits bind in a
/// fair share of instances.
pub fn random_instance(seed: u64, max_buses: usize, max_ders: usize, sides: Sides) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = TdopfParams::default();
    loop {
        let n_buses = rng.random_range(2..=max_buses);
        let mut phases = vec![PhaseSet::ABC];
        let mut buses = vec![bus(0, PhaseSet::ABC, [0.0; 3])];
        let mut lines = Vec::new();
        for k in 1..n_buses {
            let parent = rng.random_range(0..k);
            let ph = random_subset(&mut rng, phases[parent]);
            phases.push(ph);
            let load = [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
            buses.push(bus(k as u32, ph, load));
            let r = rng.random_range(0.05..2.0);
            let s = rng.random_range(0.02..0.1);
            lines.push(line(parent as u32, k as u32, ph, r, s));
        }
        let mut st = settings();
        st.s0_max = [rng.random_range(0.05..0.3); 3];
        let network = Network::new(st, buses, lines).unwrap();

        let n_ders = rng.random_range(1..=max_ders);
        let mut ders = Vec::new();
        for i in 0..n_ders {
            let b = rng.random_range(1..n_buses);
            let ph = random_subset(&mut rng, phases[b]);
            let price = rng.random_range(1.0..25.0);
            let kw = rng.random_range(5.0..45.0);
            let pf = [1.0, 0.95, 0.9][rng.random_range(0..3)];
            let bid = match sides {
                Sides::Mixed => rng.random_bool(0.5),
                Sides::Bids => true,
                Sides::Offers => false,
            };
            let der = if bid {
                Der::bid(format!("d{i}"), b as u32, ph, price, kw, pf)
            } else {
                Der::offer(format!("d{i}"), b as u32, ph, price, kw, pf)
            }
            .unwrap();
            ders.push(der);
        }
        let inst = Instance::new(network, ders);
        let zero = vec![0.0; inst.population.len()];
        if oracle::evaluate(&inst, &params, &zero, 1e-9).is_some() {
            return inst;
        }
    }
}

/// A single long three-phase line with one bid and one offer on the far bus. Each DER alone is
/// voltage-limited below full dispatch; together they cancel and both dispatch fully. The offer
/// is priced above `lmp − m` for the reference LMP of 13 so the market rejects it.
pub fn propped_voltage_feeder(offer_price: f64) -> Instance {
    let network = Network::new(
        settings(),
        vec![bus(0, PhaseSet::ABC, [0.0; 3]), bus(1, PhaseSet::ABC, [0.0; 3])],
        vec![line(0, 1, PhaseSet::ABC, 8.0, 1.0)],
    )
    .unwrap();
    let ders = vec![
        Der::bid("bid", 1, PhaseSet::ABC, 20.0, 40.0, 1.0).unwrap(),
        Der::offer("offer", 1, PhaseSet::ABC, offer_price, 40.0, 1.0).unwrap(),
    ];
    Instance::new(network, ders)
}

pub fn single_phase(p: Phase) -> PhaseSet {
    PhaseSet::single(p)
}

/// Brute-force reference for the T-DOPF: flows by summing subtree injections, voltages by walking
/// each bus path, and α enumerated on a grid.
pub mod oracle {
    use super::*;

    /// `(R̄, X̄)` from complex arithmetic: `R̄ − jX̄ = W ∘ (R − jX)` with `W_ij = ω^{(j−i) mod 3}`.
    pub fn coupled(r: &Matrix3<f64>, x: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
        let w = |k: i32| Complex::from_polar(1.0, 2.0 * std::f64::consts::PI * (k.rem_euclid(3) as f64) / 3.0);
        let mut rb = Matrix3::zeros();
        let mut xb = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let z = w(j as i32 - i as i32) * Complex::new(r[(i, j)], -x[(i, j)]);
                rb[(i, j)] = z.re;
                xb[(i, j)] = -z.im;
            }
        }
        (rb, xb)
    }

    /// Per-bus, per-phase net injections (p.u.), with DERs at fractions `alpha`.
    pub fn injections(inst: &Instance, alpha: &[f64]) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
        let net = &inst.network;
        let mut p: Vec<[f64; 3]> = net.buses().iter().map(|b| b.fixed_injection_p).collect();
        let mut q: Vec<[f64; 3]> = net.buses().iter().map(|b| b.fixed_injection_q).collect();
        for (d, a) in inst.population.ders().iter().zip(alpha) {
            let pos = net.position(d.bus).unwrap();
            let eta = (1.0 / (d.power_factor * d.power_factor) - 1.0).sqrt();
            let share = a * d.volume / (S_BASE * d.phases.len() as f64);
            for ph in d.phases.iter() {
                p[pos][ph.index()] += share;
                q[pos][ph.index()] += eta * share;
            }
        }
        (p, q)
    }

    pub struct State {
        /// Downstream flow into each non-head bus, indexed by bus position.
        pub p_flow: Vec<[f64; 3]>,
        pub q_flow: Vec<[f64; 3]>,
        pub voltages: Vec<[f64; 3]>,
        pub p0: [f64; 3],
        pub q0: [f64; 3],
    }

    pub fn state(inst: &Instance, alpha: &[f64]) -> State {
        let net = &inst.network;
        let n = net.buses().len();
        let (pi, qi) = injections(inst, alpha);
        let mut p_flow = vec![[0.0; 3]; n];
        let mut q_flow = vec![[0.0; 3]; n];
        for pos in 1..n {
            for s in net.subtree(pos) {
                for ph in 0..3 {
                    p_flow[pos][ph] -= pi[s][ph];
                    q_flow[pos][ph] -= qi[s][ph];
                }
            }
        }
        let mut p0 = [0.0; 3];
        let mut q0 = [0.0; 3];
        for pos in 1..n {
            for ph in 0..3 {
                p0[ph] -= pi[pos][ph];
                q0[ph] -= qi[pos][ph];
            }
        }
        let mut voltages = vec![net.v0(); n];
        for pos in 1..n {
            let mut v = net.v0();
            let mut chain = Vec::new();
            let mut cur = pos;
            while cur != 0 {
                chain.push(cur);
                cur = net.parent_of(cur).unwrap();
            }
            for &b in &chain {
                let l = &net.lines()[b - 1];
                let (rb, xb) = coupled(&l.r_matrix, &l.x_matrix);
                for i in 0..3 {
                    for j in 0..3 {
                        v[i] -= 2.0 * (rb[(i, j)] * p_flow[b][j] + xb[(i, j)] * q_flow[b][j]);
                    }
                }
            }
            voltages[pos] = v;
        }
        State {
            p_flow,
            q_flow,
            voltages,
            p0,
            q0,
        }
    }

    /// Objective in ¢, or `None` when the dispatch violates a limit by more than `tol`.
    pub fn evaluate(inst: &Instance, params: &TdopfParams, alpha: &[f64], tol: f64) -> Option<f64> {
        let net = &inst.network;
        let st = state(inst, alpha);
        for (pos, b) in net.buses().iter().enumerate().skip(1) {
            for ph in b.phases.iter() {
                let v = st.voltages[pos][ph.index()];
                if v < net.v_min()[ph.index()] - tol || v > net.v_max()[ph.index()] + tol {
                    return None;
                }
            }
            let l = &net.lines()[pos - 1];
            for ph in l.phases.iter() {
                let i = ph.index();
                if params.polygon.max_violation(st.p_flow[pos][i], st.q_flow[pos][i], l.s_max[i]) > tol {
                    return None;
                }
            }
        }
        for i in 0..3 {
            if params.polygon.max_violation(st.p0[i], st.q0[i], net.s0_max()[i]) > tol {
                return None;
            }
        }
        Some(objective(inst, params, alpha, &st))
    }

    pub fn objective(inst: &Instance, params: &TdopfParams, alpha: &[f64], st: &State) -> f64 {
        let mut obj = params.m * S_BASE * params.dt * st.p0.iter().sum::<f64>();
        for (d, a) in inst.population.ders().iter().zip(alpha) {
            let gamma = if d.volume < 0.0 { d.price } else { d.price - params.big_m / d.volume };
            obj += gamma * d.volume * params.dt * a;
        }
        obj
    }

    /// Best grid objective and its α, or `None` when no grid point is feasible.
    pub fn brute_force(inst: &Instance, params: &TdopfParams, step: f64) -> Option<(f64, Vec<f64>)> {
        let nd = inst.population.len();
        let levels = (1.0 / step).round() as usize;
        let total = (levels + 1).pow(nd as u32);
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut alpha = vec![0.0; nd];
        for code in 0..total {
            let mut c = code;
            for a in alpha.iter_mut() {
                *a = (c % (levels + 1)) as f64 * step;
                c /= levels + 1;
            }
            if let Some(obj) = evaluate(inst, params, &alpha, 1e-9) {
                if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                    best = Some((obj, alpha.clone()));
                }
            }
        }
        best
    }

    pub fn on_grid(alpha: &[f64], step: f64) -> bool {
        alpha.iter().all(|a| ((a / step).round() * step - a).abs() < 1e-7)
    }
}
