//! Unbalanced radial feeder: buses, lines and the limits the market must respect.
//!
//! All quantities are per-unit on the feeder's `s_base_kva`/`v_base_kv`; voltages are squared
//! magnitudes. A [`Network`] is immutable once built. Buses are stored head first followed by the
//! non-head buses in breadth-first order, and `lines[k]` is always the line that feeds `buses[k + 1]`,
//! oriented parent to child.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DVector, Matrix3};

use crate::error::{Error, Result};
use crate::phase::{Phase, PhaseSet};

/// Bus label reserved for the head (substation) bus.
pub const HEAD_BUS: u32 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    /// Label used by feeder and DER documents. The head bus is always `0`.
    pub index: u32,
    pub phases: PhaseSet,
    /// Fixed real-power injection per phase, p.u. (consumption is negative).
    pub fixed_injection_p: [f64; 3],
    /// Fixed reactive-power injection per phase, p.u.
    pub fixed_injection_q: [f64; 3],
}

impl Bus {
    pub fn is_head(&self) -> bool {
        self.index == HEAD_BUS
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from_bus: u32,
    pub to_bus: u32,
    pub phases: PhaseSet,
    /// Series resistance, p.u. Rows and columns of absent phases are zero.
    pub r_matrix: Matrix3<f64>,
    /// Series reactance, p.u.
    pub x_matrix: Matrix3<f64>,
    /// Apparent-power limit per phase, p.u.; zero on absent phases.
    pub s_max: [f64; 3],
}

/// Feeder-wide settings, already in per-unit (voltages squared).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSettings {
    pub s_base_kva: f64,
    pub v_base_kv: f64,
    pub v0: [f64; 3],
    pub v_min: [f64; 3],
    pub v_max: [f64; 3],
    pub s0_max: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Network {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    parent: Vec<usize>,
    children: Vec<Vec<usize>>,
    position: BTreeMap<u32, usize>,
    settings: NetworkSettings,
}

impl Network {
    /// Validates the tree, orients every line away from the head and fixes the internal ordering.
    pub fn new(settings: NetworkSettings, buses: Vec<Bus>, lines: Vec<Line>) -> Result<Self> {
        validate_settings(&settings)?;

        let mut by_label: BTreeMap<u32, Bus> = BTreeMap::new();
        for bus in buses {
            let label = bus.index;
            if by_label.insert(label, bus).is_some() {
                return Err(Error::Schema(format!("bus {label} defined more than once")));
            }
        }
        if !by_label.contains_key(&HEAD_BUS) {
            return Err(Error::Schema("feeder has no head bus (index 0)".into()));
        }
        let n = by_label.len() - 1;
        if lines.len() != n {
            return Err(Error::Topology(format!(
                "a radial feeder with {n} non-head buses needs {n} lines, found {}",
                lines.len()
            )));
        }

        let mut adjacency: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (k, line) in lines.iter().enumerate() {
            for end in [line.from_bus, line.to_bus] {
                if !by_label.contains_key(&end) {
                    return Err(Error::Schema(format!("line {k} references unknown bus {end}")));
                }
            }
            if line.from_bus == line.to_bus {
                return Err(Error::Topology(format!("line {k} is a self-loop on bus {}", line.from_bus)));
            }
            adjacency.entry(line.from_bus).or_default().push(k);
            adjacency.entry(line.to_bus).or_default().push(k);
        }

        // Breadth-first walk from the head; `feeding[label]` is the line that reaches it.
        let mut order = vec![HEAD_BUS];
        let mut feeding: BTreeMap<u32, usize> = BTreeMap::new();
        let mut queue = VecDeque::from([HEAD_BUS]);
        while let Some(label) = queue.pop_front() {
            for &k in adjacency.get(&label).map(Vec::as_slice).unwrap_or(&[]) {
                if feeding.get(&label) == Some(&k) {
                    continue;
                }
                let line = &lines[k];
                let other = if line.from_bus == label { line.to_bus } else { line.from_bus };
                if other == HEAD_BUS || feeding.contains_key(&other) {
                    return Err(Error::Topology(format!(
                        "line {k} ({}-{}) closes a cycle",
                        line.from_bus, line.to_bus
                    )));
                }
                feeding.insert(other, k);
                order.push(other);
                queue.push_back(other);
            }
        }
        if order.len() != by_label.len() {
            let missing: Vec<u32> = by_label
                .keys()
                .filter(|l| **l != HEAD_BUS && !feeding.contains_key(l))
                .copied()
                .collect();
            return Err(Error::Topology(format!("buses not reachable from the head: {missing:?}")));
        }

        let position: BTreeMap<u32, usize> = order.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        let mut ordered_buses = Vec::with_capacity(order.len());
        let mut ordered_lines = Vec::with_capacity(n);
        let mut parent = vec![0usize; order.len()];
        let mut children = vec![Vec::new(); order.len()];
        for (pos, label) in order.iter().enumerate() {
            let bus = by_label.remove(label).expect("label collected from map");
            if pos > 0 {
                let k = feeding[label];
                let src = &lines[k];
                let from = if src.to_bus == *label { src.from_bus } else { src.to_bus };
                parent[pos] = position[&from];
                children[position[&from]].push(pos);
                ordered_lines.push(Line {
                    from_bus: from,
                    to_bus: *label,
                    ..src.clone()
                });
            }
            ordered_buses.push(bus);
        }

        let network = Network {
            buses: ordered_buses,
            lines: ordered_lines,
            parent,
            children,
            position,
            settings,
        };
        network.validate_phases()?;
        Ok(network)
    }

    fn validate_phases(&self) -> Result<()> {
        let head = &self.buses[0];
        if head.phases != PhaseSet::ABC {
            return Err(Error::Schema("the head bus must carry all three phases".into()));
        }
        for bus in &self.buses {
            for ph in Phase::ALL {
                let i = ph.index();
                if !bus.phases.contains(ph) && (bus.fixed_injection_p[i] != 0.0 || bus.fixed_injection_q[i] != 0.0) {
                    return Err(Error::Schema(format!(
                        "bus {} has a fixed injection on absent phase {ph}",
                        bus.index
                    )));
                }
                if !bus.fixed_injection_p[i].is_finite() || !bus.fixed_injection_q[i].is_finite() {
                    return Err(Error::Schema(format!("bus {} has a non-finite fixed injection", bus.index)));
                }
            }
        }
        for (k, line) in self.lines.iter().enumerate() {
            let from = &self.buses[self.parent[k + 1]];
            let to = &self.buses[k + 1];
            if !line.phases.is_subset_of(from.phases) {
                return Err(Error::Schema(format!(
                    "line {}-{} carries phases {} not present at bus {}",
                    line.from_bus, line.to_bus, line.phases, from.index
                )));
            }
            if !to.phases.is_subset_of(line.phases) {
                return Err(Error::Schema(format!(
                    "bus {} has phases {} but is fed by a line with phases {}",
                    to.index, to.phases, line.phases
                )));
            }
            for ph in Phase::ALL {
                let i = ph.index();
                let s = line.s_max[i];
                if !(s >= 0.0) || !s.is_finite() {
                    return Err(Error::Schema(format!(
                        "line {}-{} has invalid s_max {s} on phase {ph}",
                        line.from_bus, line.to_bus
                    )));
                }
                if line.phases.contains(ph) && s == 0.0 {
                    return Err(Error::Schema(format!(
                        "line {}-{} has zero s_max on present phase {ph}",
                        line.from_bus, line.to_bus
                    )));
                }
                if !line.phases.contains(ph) {
                    if s != 0.0 {
                        return Err(Error::Schema(format!(
                            "line {}-{} has a limit on absent phase {ph}",
                            line.from_bus, line.to_bus
                        )));
                    }
                    for j in 0..3 {
                        if line.r_matrix[(i, j)] != 0.0
                            || line.r_matrix[(j, i)] != 0.0
                            || line.x_matrix[(i, j)] != 0.0
                            || line.x_matrix[(j, i)] != 0.0
                        {
                            return Err(Error::Schema(format!(
                                "line {}-{} has impedance on absent phase {ph}",
                                line.from_bus, line.to_bus
                            )));
                        }
                    }
                }
            }
            if line.r_matrix.iter().chain(line.x_matrix.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!(
                    "line {}-{} has non-finite impedance",
                    line.from_bus, line.to_bus
                )));
            }
        }
        Ok(())
    }

    /// Number of non-head buses (equal to the number of lines).
    pub fn n(&self) -> usize {
        self.lines.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn settings(&self) -> &NetworkSettings {
        &self.settings
    }

    pub fn s_base_kva(&self) -> f64 {
        self.settings.s_base_kva
    }

    pub fn v0(&self) -> [f64; 3] {
        self.settings.v0
    }

    pub fn v_min(&self) -> [f64; 3] {
        self.settings.v_min
    }

    pub fn v_max(&self) -> [f64; 3] {
        self.settings.v_max
    }

    pub fn s0_max(&self) -> [f64; 3] {
        self.settings.s0_max
    }

    /// Internal position of a bus label (0 is the head).
    pub fn position(&self, label: u32) -> Option<usize> {
        self.position.get(&label).copied()
    }

    pub fn bus(&self, label: u32) -> Option<&Bus> {
        self.position(label).map(|p| &self.buses[p])
    }

    /// Position of the parent bus; `None` for the head.
    pub fn parent_of(&self, pos: usize) -> Option<usize> {
        (pos > 0).then(|| self.parent[pos])
    }

    pub fn children_of(&self, pos: usize) -> &[usize] {
        &self.children[pos]
    }

    /// Lines on the path from the head to the bus at `pos`, head side first.
    pub fn path_lines(&self, pos: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut cur = pos;
        while cur != 0 {
            path.push(cur - 1);
            cur = self.parent[cur];
        }
        path.reverse();
        path
    }

    /// Positions of every bus in the subtree rooted at `pos`, including `pos`.
    pub fn subtree(&self, pos: usize) -> Vec<usize> {
        let mut out = vec![pos];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.children[out[i]]);
            i += 1;
        }
        out
    }

    /// Whether `phase` is present at the non-head bus in block `k` (bus position `k + 1`).
    pub fn block_has_phase(&self, k: usize, phase: usize) -> bool {
        self.lines[k].phases.contains_index(phase)
    }

    /// Stacked fixed real injections of the non-head buses (3N).
    pub fn fixed_p(&self) -> DVector<f64> {
        self.stack(|b| b.fixed_injection_p)
    }

    /// Stacked fixed reactive injections of the non-head buses (3N).
    pub fn fixed_q(&self) -> DVector<f64> {
        self.stack(|b| b.fixed_injection_q)
    }

    fn stack(&self, f: impl Fn(&Bus) -> [f64; 3]) -> DVector<f64> {
        let mut v = DVector::zeros(3 * self.n());
        for (k, bus) in self.buses.iter().skip(1).enumerate() {
            let vals = f(bus);
            for ph in 0..3 {
                v[3 * k + ph] = vals[ph];
            }
        }
        v
    }

    /// Total fixed consumption as (kW, kVAr), positive for net load.
    pub fn total_fixed_load(&self) -> (f64, f64) {
        let s = self.settings.s_base_kva;
        let p: f64 = self.buses.iter().flat_map(|b| b.fixed_injection_p).sum();
        let q: f64 = self.buses.iter().flat_map(|b| b.fixed_injection_q).sum();
        (-p * s, -q * s)
    }
}

fn validate_settings(s: &NetworkSettings) -> Result<()> {
    if !(s.s_base_kva > 0.0) || !(s.v_base_kv > 0.0) {
        return Err(Error::Schema("s_base_kva and v_base_kv must be positive".into()));
    }
    for i in 0..3 {
        let ph = Phase::ALL[i];
        if !(s.v_min[i] < s.v0[i] && s.v0[i] < s.v_max[i]) {
            return Err(Error::Schema(format!(
                "phase {ph}: need v_min < v0 < v_max, got {} / {} / {}",
                s.v_min[i], s.v0[i], s.v_max[i]
            )));
        }
        if !(s.v_min[i] > 0.0) {
            return Err(Error::Schema(format!("phase {ph}: v_min must be positive")));
        }
        if !(s.s0_max[i] > 0.0) || !s.s0_max[i].is_finite() {
            return Err(Error::Schema(format!("phase {ph}: substation limit must be positive")));
        }
    }
    Ok(())
}
