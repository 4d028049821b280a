//! Regular-polygon inner approximation of the apparent-power disk `P² + Q² ≤ S²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EDGES: usize = 12;

/// One half-plane `β·P + δ·Q + γ·S ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl Edge {
    /// Left-hand side of the edge inequality; feasible when `≤ 0`.
    pub fn eval(&self, p: f64, q: f64, s: f64) -> f64 {
        self.beta * p + self.delta * q + self.gamma * s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonApprox {
    edges: Vec<Edge>,
}

/// Edges with outward normals at angles `2πe/E`, `e = 1..=E`, and offset `cos(π/E)`.
pub fn polygon_coefficients(edge_count: usize) -> Result<PolygonApprox> {
    if edge_count < 3 {
        return Err(Error::Domain(format!("polygon needs at least 3 edges, got {edge_count}")));
    }
    let e_f = edge_count as f64;
    let gamma = -(std::f64::consts::PI / e_f).cos();
    let edges = (1..=edge_count)
        .map(|e| {
            let angle = 2.0 * std::f64::consts::PI * e as f64 / e_f;
            Edge {
                beta: angle.cos(),
                delta: angle.sin(),
                gamma,
            }
        })
        .collect();
    Ok(PolygonApprox { edges })
}

impl PolygonApprox {
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Largest edge violation at `(p, q)` for limit `s`; non-positive means inside.
    pub fn max_violation(&self, p: f64, q: f64, s: f64) -> f64 {
        self.edges
            .iter()
            .map(|e| e.eval(p, q, s))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, p: f64, q: f64, s: f64, tol: f64) -> bool {
        self.max_violation(p, q, s) <= tol
    }

    /// Corners of the polygon for limit `s`: intersections of consecutive edges.
    pub fn vertices(&self, s: f64) -> Vec<(f64, f64)> {
        let n = self.edges.len();
        (0..n)
            .map(|i| {
                let a = self.edges[i];
                let b = self.edges[(i + 1) % n];
                let det = a.beta * b.delta - a.delta * b.beta;
                let ra = -a.gamma * s;
                let rb = -b.gamma * s;
                ((ra * b.delta - a.delta * rb) / det, (a.beta * rb - ra * b.beta) / det)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn square() {
        let poly = polygon_coefficients(4).unwrap();
        assert!((poly.edges()[0].gamma + 0.5f64.sqrt()).abs() < 1e-15);
        assert!(poly.contains(0.70, 0.0, 1.0, 0.0));
        assert!(!poly.contains(0.71, 0.0, 1.0, 0.0));
    }

    #[test]
    fn twelve_gon_apothem_touches_edge() {
        let poly = polygon_coefficients(12).unwrap();
        let apothem = (std::f64::consts::PI / 12.0).cos();
        let last = poly.edges()[11];
        assert!(last.eval(apothem, 0.0, 1.0).abs() < 1e-15);
        assert!(poly.max_violation(apothem, 0.0, 1.0).abs() < 1e-15);
    }

    #[test]
    fn too_few_edges() {
        assert!(matches!(polygon_coefficients(2), Err(Error::Domain(_))));
    }

    proptest! {
        #[test]
        fn inscribed_geometry(e in 3usize..40, s in 0.01f64..10.0) {
            let poly = polygon_coefficients(e).unwrap();
            for edge in poly.edges() {
                prop_assert!((edge.beta.powi(2) + edge.delta.powi(2) - 1.0).abs() < 1e-12);
            }
            // Corners sit on the circle, so every point of the polygon is inside the disk.
            for (p, q) in poly.vertices(s) {
                prop_assert!(((p * p + q * q).sqrt() - s).abs() < 1e-9 * s);
                prop_assert!(poly.contains(p, q, s, 1e-9 * s));
            }
            let apothem = s * (std::f64::consts::PI / e as f64).cos();
            for k in 0..e {
                let angle = 2.0 * std::f64::consts::PI * (k as f64 + 1.0) / e as f64;
                prop_assert!(poly.max_violation(apothem * angle.cos(), apothem * angle.sin(), s).abs() < 1e-9 * s);
            }
        }
    }
}
