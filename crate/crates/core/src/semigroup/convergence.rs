use serde::{Deserialize, Serialize};

use super::operator::DiscreteOperator;
use super::resolvent::{solve_resolvent, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::{lq_norm, sup_norm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n_prev: u32,
    pub n: u32,
    pub sup_diff: f64,
    pub lq_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub mu: f64,
    pub q: f64,
    pub rows: Vec<ConvergenceRow>,
    pub strictly_decreasing: bool,
}

/// Differences of `(μ + Λ_n)^{-1} f` between consecutive members of an
/// operator family on one grid.
pub fn resolvent_convergence(
    ops: &[(u32, &DiscreteOperator)],
    f: &[f64],
    mu: f64,
    q: f64,
    opts: &SolverOptions,
) -> Result<ConvergenceTable> {
    let grid = &ops.first().ok_or_else(|| Error::InvalidSpec("empty operator family".into()))?.1.grid;
    if ops.iter().any(|(_, op)| op.grid != *grid) {
        return Err(Error::GridMismatch);
    }
    let sols: Vec<(u32, Vec<f64>)> =
        ops.iter().map(|(n, op)| Ok((*n, solve_resolvent(op, mu, f, opts)?.u))).collect::<Result<_>>()?;
    let rows: Vec<ConvergenceRow> = sols
        .windows(2)
        .map(|w| {
            let d: Vec<f64> = w[1].1.iter().zip(&w[0].1).map(|(a, b)| a - b).collect();
            ConvergenceRow { n_prev: w[0].0, n: w[1].0, sup_diff: sup_norm(&d), lq_diff: lq_norm(grid, &d, q) }
        })
        .collect();
    let strictly_decreasing = rows.len() >= 2 && rows.windows(2).all(|w| w[1].sup_diff < w[0].sup_diff);
    Ok(ConvergenceTable { mu, q, rows, strictly_decreasing })
}
