//! Minimal linear-program representation and the solver interface behind it.
//!
//! Duals follow one convention regardless of backend: for `min cᵀx` subject to
//! `l ≤ Ax ≤ u` and column bounds, `c = Aᵀy + z`, so a row binding at its lower
//! bound has `y ≥ 0` and one binding at its upper bound has `y ≤ 0`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub lower: f64,
    pub upper: f64,
    pub entries: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub col_lower: Vec<f64>,
    pub col_upper: Vec<f64>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn add_column(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.cost.push(cost);
        self.col_lower.push(lower);
        self.col_upper.push(upper);
        self.cost.len() - 1
    }

    pub fn add_row(&mut self, lower: f64, upper: f64, entries: Vec<(usize, f64)>) -> usize {
        self.rows.push(Row { lower, upper, entries });
        self.rows.len() - 1
    }

    pub fn num_cols(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row_activity(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.entries.iter().map(|&(j, a)| a * x[j]).sum())
            .collect()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, x)| c * x).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub x: Vec<f64>,
    pub row_activity: Vec<f64>,
    pub row_duals: Vec<f64>,
    pub col_duals: Vec<f64>,
}

pub trait LpSolver: Send + Sync {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution>;
}

/// Dual simplex through HiGHS, single-threaded with tight tolerances.
#[derive(Debug, Clone, Copy, Default)]
pub struct HighsSolver;

impl LpSolver for HighsSolver {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution> {
        use highs::{HighsModelStatus, RowProblem, Sense};

        if lp.num_cols() == 0 {
            return Ok(LpSolution {
                status: if lp.rows.iter().all(|r| r.lower <= 0.0 && 0.0 <= r.upper) {
                    LpStatus::Optimal
                } else {
                    LpStatus::Infeasible
                },
                objective: 0.0,
                x: vec![],
                row_activity: vec![0.0; lp.num_rows()],
                row_duals: vec![0.0; lp.num_rows()],
                col_duals: vec![],
            });
        }

        let mut pb = RowProblem::default();
        let cols: Vec<_> = (0..lp.num_cols())
            .map(|j| pb.add_column(lp.cost[j], lp.col_lower[j]..=lp.col_upper[j]))
            .collect();
        for row in &lp.rows {
            pb.add_row(row.lower..=row.upper, row.entries.iter().map(|&(j, a)| (cols[j], a)));
        }

        let mut model = pb.optimise(Sense::Minimise);
        model.make_quiet();
        model.set_option("threads", 1);
        model.set_option("solver", "simplex");
        model.set_option("presolve", "off");
        model.set_option("random_seed", 0);
        model.set_option("primal_feasibility_tolerance", 1e-10);
        model.set_option("dual_feasibility_tolerance", 1e-10);
        let solved = model
            .try_solve()
            .map_err(|s| Error::Solver(format!("HiGHS failed: {s:?}")))?;

        let status = match solved.status() {
            HighsModelStatus::Optimal => LpStatus::Optimal,
            HighsModelStatus::Infeasible => LpStatus::Infeasible,
            HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => LpStatus::Unbounded,
            other => return Err(Error::Solver(format!("HiGHS returned {other:?}"))),
        };
        let sol = solved.get_solution();
        Ok(LpSolution {
            status,
            objective: if status == LpStatus::Optimal { solved.objective_value() } else { f64::NAN },
            x: sol.columns().to_vec(),
            row_activity: sol.rows().to_vec(),
            row_duals: sol.dual_rows().to_vec(),
            col_duals: sol.dual_columns().to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_sign_convention() {
        // min x + y  s.t.  x + y >= 2,  x - y <= 1 (inactive),  x <= 3
        let mut lp = LinearProgram::default();
        let x = lp.add_column(1.0, 0.0, 3.0);
        let y = lp.add_column(1.0, 0.0, 10.0);
        lp.add_row(2.0, f64::INFINITY, vec![(x, 1.0), (y, 1.0)]);
        lp.add_row(f64::NEG_INFINITY, 1.0, vec![(x, 1.0), (y, -1.0)]);
        let sol = HighsSolver.solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-12);
        assert!((sol.row_duals[0] - 1.0).abs() < 1e-12);
        assert!(sol.row_duals[1].abs() < 1e-12);

        // max x  ==  min -x  s.t.  x + y <= 4: binding at the upper side gives y = -1.
        let mut lp = LinearProgram::default();
        let x = lp.add_column(-1.0, 0.0, 10.0);
        let y = lp.add_column(0.0, 0.0, 10.0);
        lp.add_row(f64::NEG_INFINITY, 4.0, vec![(x, 1.0), (y, 1.0)]);
        let sol = HighsSolver.solve(&lp).unwrap();
        assert!((sol.x[0] - 4.0).abs() < 1e-12);
        assert!((sol.row_duals[0] + 1.0).abs() < 1e-12);
        // c = Aᵀy + z for each column.
        for j in 0..2 {
            let aty: f64 = lp.rows.iter().zip(&sol.row_duals).flat_map(|(r, yv)| {
                r.entries.iter().filter(move |e| e.0 == j).map(move |e| e.1 * yv)
            }).sum();
            assert!((lp.cost[j] - aty - sol.col_duals[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_and_equality() {
        let mut lp = LinearProgram::default();
        let x = lp.add_column(1.0, 0.0, 1.0);
        lp.add_row(2.0, 2.0, vec![(x, 1.0)]);
        assert_eq!(HighsSolver.solve(&lp).unwrap().status, LpStatus::Infeasible);

        let mut lp = LinearProgram::default();
        let x = lp.add_column(3.0, f64::NEG_INFINITY, f64::INFINITY);
        lp.add_row(0.5, 0.5, vec![(x, 2.0)]);
        let sol = HighsSolver.solve(&lp).unwrap();
        assert!((sol.x[0] - 0.25).abs() < 1e-12);
        assert!((sol.row_duals[0] - 1.5).abs() < 1e-12);
    }
}
