//! Reference tabular solver for the discretized problem.
//!
//! Treats the discrete operator as a plain finite MDP and solves it by exact
//! policy iteration: each evaluation solves the linear system
//! (I − γ_π W_π) u = stage_π with a dense LU factorization. This shares no
//! iteration machinery with [`crate::solver::value_iteration`] and is used to
//! cross-validate it on small grids.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};
use crate::solver::DiscreteOperator;

/// Exact solution of the discrete equation by policy iteration over the
/// admissible stencils. Intended for small node counts (dense solves).
pub fn solve_exact(op: &DiscreteOperator) -> Result<Vec<f64>> {
    let n = op.nodes.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    // stencil position (not control index) per node
    let mut policy = vec![0usize; n];
    let mut u = DVector::zeros(n);
    let max_outer = 10_000;

    for _ in 0..max_outer {
        // exact policy evaluation
        let mut m = DMatrix::identity(n, n);
        let mut rhs = DVector::zeros(n);
        for (i, &si) in policy.iter().enumerate() {
            let s = &op.nodes[i].stencils[si];
            for &(j, w) in &s.neighbors {
                m[(i, j)] -= s.gamma * w;
            }
            rhs[i] = s.stage;
        }
        u = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| CoreError::InvalidParam("singular policy evaluation system".into()))?;

        // greedy improvement over stencils
        let mut improved = Vec::with_capacity(n);
        for node in &op.nodes {
            let mut best = 0usize;
            let mut best_v = f64::INFINITY;
            for (si, s) in node.stencils.iter().enumerate() {
                let v = s.apply(u.as_slice());
                if v < best_v - 1e-14 {
                    best_v = v;
                    best = si;
                }
            }
            improved.push(best);
        }
        if improved == policy {
            return Ok(u.as_slice().to_vec());
        }
        policy = improved;
    }
    Ok(u.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{catalog_problem, CatalogParams};
    use crate::grid::build_grid;
    use crate::solver::{discretize, value_iteration, DiscretizeOptions, SolveOptions};

    #[test]
    fn exact_solver_matches_value_iteration() {
        for name in ["constant-cost", "deterministic-decay", "coarse-mdp"] {
            let (pr, dom) = catalog_problem(name, &CatalogParams::default()).unwrap();
            let grid = build_grid(&dom, 0.1, None).unwrap();
            let op = discretize(&pr, &grid, &DiscretizeOptions::default()).unwrap();
            let vi = value_iteration(
                &op,
                &SolveOptions {
                    tol: 1e-10,
                    ..Default::default()
                },
            )
            .unwrap();
            let exact = solve_exact(&op).unwrap();
            let sup = vi
                .value
                .values
                .iter()
                .zip(&exact)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(sup <= 1e-8, "{name}: sup deviation {sup}");
        }
    }

    #[test]
    fn exact_solver_constant_cost_closed_form() {
        let (pr, dom) = catalog_problem("constant-cost", &CatalogParams::default()).unwrap();
        let grid = build_grid(&dom, 0.25, None).unwrap();
        let op = discretize(&pr, &grid, &DiscretizeOptions::default()).unwrap();
        for v in solve_exact(&op).unwrap() {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }
}
