//! Matrix form of the three-phase LinDistFlow model.
//!
//! With lines oriented parent to child and `lines[k]` feeding non-head bus `k`, the incidence
//! block `c` is `-I` on its diagonal and `+I` at `(line, parent bus)`. Its inverse is `-I` at
//! `(bus i, line l)` whenever line `l` lies on the head-to-`i` path, so it is assembled by walking
//! the tree instead of by dense inversion.

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::error::{Error, Result};
use crate::network::Network;

/// Tolerance on `c * c_inv - I`.
pub const INVERSE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct NetworkMatrices {
    /// 3N x 3 incidence block of the head bus.
    pub c0: DMatrix<f64>,
    /// 3N x 3N incidence block of the non-head buses (rows: lines, columns: buses).
    pub c: DMatrix<f64>,
    pub c_inv: DMatrix<f64>,
    /// Block-diagonal phase-coupled resistances.
    pub d_r: DMatrix<f64>,
    /// Block-diagonal phase-coupled reactances.
    pub d_x: DMatrix<f64>,
}

impl NetworkMatrices {
    /// Size of the stacked flow and voltage vectors (3N).
    pub fn dim(&self) -> usize {
        self.c.nrows()
    }
}

/// Phase-coupled resistance and reactance: `Re(W)∘R + Im(W)∘X` and `Re(W)∘X − Im(W)∘R`,
/// where `W` holds powers of `ω = e^{j2π/3}`.
pub fn phase_coupled_impedance(r: &Matrix3<f64>, x: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let h = 3f64.sqrt() / 2.0;
    #[rustfmt::skip]
    let re_w = Matrix3::new(
        1.0, -0.5, -0.5,
        -0.5, 1.0, -0.5,
        -0.5, -0.5, 1.0,
    );
    #[rustfmt::skip]
    let im_w = Matrix3::new(
        0.0, h, -h,
        -h, 0.0, h,
        h, -h, 0.0,
    );
    let r_bar = re_w.component_mul(r) + im_w.component_mul(x);
    let x_bar = re_w.component_mul(x) - im_w.component_mul(r);
    (r_bar, x_bar)
}

pub fn build_matrices(network: &Network) -> Result<NetworkMatrices> {
    let n = network.n();
    let dim = 3 * n;
    let mut c0 = DMatrix::zeros(dim, 3);
    let mut c = DMatrix::zeros(dim, dim);
    let mut c_inv = DMatrix::zeros(dim, dim);
    let mut d_r = DMatrix::zeros(dim, dim);
    let mut d_x = DMatrix::zeros(dim, dim);

    for (k, line) in network.lines().iter().enumerate() {
        let child = k + 1;
        let parent = network.parent_of(child).expect("non-head bus has a parent");
        for ph in 0..3 {
            c[(3 * k + ph, 3 * k + ph)] = -1.0;
            if parent == 0 {
                c0[(3 * k + ph, ph)] = 1.0;
            } else {
                c[(3 * k + ph, 3 * (parent - 1) + ph)] = 1.0;
            }
        }
        let (r_bar, x_bar) = phase_coupled_impedance(&line.r_matrix, &line.x_matrix);
        d_r.view_mut((3 * k, 3 * k), (3, 3)).copy_from(&r_bar);
        d_x.view_mut((3 * k, 3 * k), (3, 3)).copy_from(&x_bar);
    }

    for bus in 1..=n {
        for l in network.path_lines(bus) {
            for ph in 0..3 {
                c_inv[(3 * (bus - 1) + ph, 3 * l + ph)] = -1.0;
            }
        }
    }

    let residual = (&c * &c_inv - DMatrix::<f64>::identity(dim, dim)).amax();
    if residual > INVERSE_TOLERANCE {
        return Err(Error::Internal(format!(
            "incidence inverse residual {residual:e} exceeds {INVERSE_TOLERANCE:e}"
        )));
    }

    Ok(NetworkMatrices { c0, c, c_inv, d_r, d_x })
}

fn check_len(v: &DVector<f64>, expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Shape {
            expected,
            got: v.len(),
        });
    }
    Ok(())
}

/// Squared voltages of the non-head buses: `1·v0 + 2·c_inv·(d_r·P + d_x·Q)`.
pub fn lindistflow_voltages(
    m: &NetworkMatrices,
    v0: [f64; 3],
    p_flows: &DVector<f64>,
    q_flows: &DVector<f64>,
) -> Result<DVector<f64>> {
    let dim = m.dim();
    check_len(p_flows, dim)?;
    check_len(q_flows, dim)?;
    let drop = &m.c_inv * (&m.d_r * p_flows + &m.d_x * q_flows) * 2.0;
    Ok(DVector::from_fn(dim, |i, _| v0[i % 3] + drop[i]))
}

/// Head-bus injections `(c0ᵀP, c0ᵀQ)`.
pub fn head_injection(
    m: &NetworkMatrices,
    p_flows: &DVector<f64>,
    q_flows: &DVector<f64>,
) -> Result<([f64; 3], [f64; 3])> {
    check_len(p_flows, m.dim())?;
    check_len(q_flows, m.dim())?;
    let p0 = m.c0.transpose() * p_flows;
    let q0 = m.c0.transpose() * q_flows;
    Ok(([p0[0], p0[1], p0[2]], [q0[0], q0[1], q0[2]]))
}

/// Line flows that balance the given non-head injections (`cᵀF = inj`), accumulated over subtrees.
pub fn flows_from_injections(network: &Network, injections: &DVector<f64>) -> Result<DVector<f64>> {
    let n = network.n();
    check_len(injections, 3 * n)?;
    let mut flows = DVector::zeros(3 * n);
    // Children always sit after their parent, so a reverse sweep sees every subtree complete.
    for bus in (1..=n).rev() {
        let k = bus - 1;
        for ph in 0..3 {
            let mut f = -injections[3 * k + ph];
            for &child in network.children_of(bus) {
                f += flows[3 * (child - 1) + ph];
            }
            flows[3 * k + ph] = f;
        }
    }
    Ok(flows)
}
