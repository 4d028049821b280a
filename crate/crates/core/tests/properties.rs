//! Randomized structural invariants of the network matrices and the market pipeline.
mod common;

use common::{oracle, random_instance, Sides};
use gridclear::der::per_phase_injection;
use gridclear::lindistflow::{build_matrices, flows_from_injections, head_injection, lindistflow_voltages};
use gridclear::tdopf::{net_injections, Restrictions};
use gridclear::{run_case, CaseKind, LmpSource, TdopfParams, TdopfProblem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_identity_and_inverse(seed in any::<u64>()) {
        let inst = random_instance(seed, 9, 1, Sides::Mixed);
        let m = build_matrices(&inst.network).unwrap();
        let n3 = m.dim();
        let row_sums = &m.c0 * DVector::from_element(3, 1.0) + &m.c * DVector::from_element(n3, 1.0);
        prop_assert!(row_sums.iter().all(|v| *v == 0.0));
        prop_assert!(m.c.iter().chain(m.c0.iter()).all(|v| v.fract() == 0.0));
        let resid = &m.c * &m.c_inv - DMatrix::<f64>::identity(n3, n3);
        prop_assert!(resid.amax() <= 1e-10);
    }

    #[test]
    fn zero_flows_give_the_head_voltage(seed in any::<u64>()) {
        let inst = random_instance(seed, 9, 1, Sides::Mixed);
        let z = DVector::zeros(inst.matrices.dim());
        let v = lindistflow_voltages(&inst.matrices, inst.network.v0(), &z, &z).unwrap();
        prop_assert!(v.iter().enumerate().all(|(i, x)| *x == inst.network.v0()[i % 3]));
        prop_assert_eq!(head_injection(&inst.matrices, &z, &z).unwrap(), ([0.0; 3], [0.0; 3]));
    }

    #[test]
    fn linearization_is_lossless(seed in any::<u64>(), a in prop::collection::vec(0.0f64..=1.0, 8)) {
        let inst = random_instance(seed, 9, 8, Sides::Mixed);
        let alpha = &a[..inst.population.len()];
        let (p, q) = net_injections(&inst.network, &inst.population, alpha);
        let pf = flows_from_injections(&inst.network, &p).unwrap();
        let qf = flows_from_injections(&inst.network, &q).unwrap();
        let (p0, q0) = head_injection(&inst.matrices, &pf, &qf).unwrap();
        prop_assert!((p0.iter().sum::<f64>() + p.sum()).abs() <= 1e-12);
        prop_assert!((q0.iter().sum::<f64>() + q.sum()).abs() <= 1e-12);
        // cᵀF reproduces the injections
        let back = inst.matrices.c.transpose() * &pf;
        prop_assert!((back - &p).amax() <= 1e-12);
        let st = oracle::state(&inst, alpha);
        prop_assert!((0..3).all(|i| (st.p0[i] - p0[i]).abs() <= 1e-12));
    }

    #[test]
    fn per_phase_injections_add_up(seed in any::<u64>()) {
        let inst = random_instance(seed, 6, 8, Sides::Mixed);
        for d in inst.population.ders() {
            let inj = per_phase_injection(d, common::S_BASE);
            prop_assert!((inj.iter().sum::<f64>() * common::S_BASE - d.volume).abs() <= 1e-12);
        }
        let a = inst.population.a_matrix(&inst.network);
        for j in 0..a.ncols() {
            prop_assert_eq!(a.column(j).iter().filter(|v| **v != 0.0).count(), 1);
        }
    }

    #[test]
    fn optimal_flows_stay_in_the_disc(seed in any::<u64>()) {
        let inst = random_instance(seed, 6, 8, Sides::Mixed);
        let params = TdopfParams::default();
        let pb = TdopfProblem::assemble(&inst.network, &inst.matrices, &inst.population, params, Restrictions::none(inst.population.len())).unwrap();
        let sol = pb.solve().unwrap();
        prop_assert!(sol.is_optimal());
        for (k, l) in inst.network.lines().iter().enumerate() {
            for ph in 0..3 {
                let i = 3 * k + ph;
                prop_assert!(sol.p_flows[i].hypot(sol.q_flows[i]) <= l.s_max[ph] + 1e-9);
            }
        }
    }

    #[test]
    fn ex_post_keeps_net_interchange(seed in any::<u64>(), lmp in 5.0f64..20.0) {
        let inst = random_instance(seed, 6, 8, Sides::Mixed);
        let params = TdopfParams::default();
        let r = run_case(&inst.network, &inst.matrices, &inst.population, &params, &LmpSource::Fixed { price: lmp }, CaseKind::C).unwrap();
        let mc: f64 = r.outcome.alpha_hat.iter().map(|&(i, a)| a * inst.population.ders()[i].volume).sum();
        prop_assert!(mc.abs() / common::S_BASE <= 1e-6);
        let (fixed, _) = inst.network.total_fixed_load();
        let withdrawal = r.dispatch.p0.iter().sum::<f64>() * common::S_BASE - fixed;
        prop_assert!((withdrawal - r.outcome.scheduled_net_interchange_kw).abs() / common::S_BASE <= 1e-6);
    }
}
