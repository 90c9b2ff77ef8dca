//! Residual-based verification of the constrained viscosity inequalities,
//! plus sandwich and comparison checks between candidate bounds.
//!
//! The test-function definition of viscosity solutions is not finitely
//! enumerable; for a monotone consistent scheme the computable surrogate is
//! the signed residual of the discrete operator. Subsolutions are checked on
//! interior nodes only; supersolutions on every in-domain node including the
//! boundary, whose stencils are one-sided into the interior — this asymmetry
//! is the state-constraint signature. All reports state the surrogacy.

use crate::error::{CoreError, Result};
use crate::grid::{NodeClass, ValueFunction};
use crate::solver::{bellman_residual, DiscreteOperator};

/// Default fraction of nodes that must pass for an overall verdict.
pub const DEFAULT_PASS_FRACTION: f64 = 0.99;

/// Which inequality a violation belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    /// Residual ≤ tol required on interior nodes.
    InteriorSub,
    /// Residual ≥ −tol required on all in-domain nodes.
    EverywhereSuper,
}

impl CheckKind {
    pub fn label(self) -> &'static str {
        match self {
            CheckKind::InteriorSub => "interior-sub",
            CheckKind::EverywhereSuper => "everywhere-super",
        }
    }
}

/// One out-of-band node.
#[derive(Clone, Debug)]
pub struct Violation {
    /// Compact in-domain node index.
    pub node: usize,
    pub location: Vec<f64>,
    pub residual: f64,
}

/// Residual check outcome.
#[derive(Clone, Debug)]
pub struct ViolationReport {
    pub kind: CheckKind,
    pub checked: usize,
    pub violations: Vec<Violation>,
    pub pass_fraction: f64,
    pub tol: f64,
}

impl ViolationReport {
    /// Overall verdict at the default ≥ 99% pass fraction.
    pub fn pass(&self) -> bool {
        self.pass_with(DEFAULT_PASS_FRACTION)
    }

    pub fn pass_with(&self, fraction: f64) -> bool {
        self.pass_fraction >= fraction
    }
}

fn residual_check(
    u: &ValueFunction,
    op: &DiscreteOperator,
    tol: f64,
    kind: CheckKind,
) -> Result<ViolationReport> {
    let residual = bellman_residual(u, op)?;
    let grid = &op.grid;
    let mut checked = 0usize;
    let mut violations = Vec::new();
    for (ci, &flat) in grid.nodes.iter().enumerate() {
        let class = grid.class_at(flat);
        let include = match kind {
            CheckKind::InteriorSub => class == NodeClass::Interior,
            CheckKind::EverywhereSuper => true,
        };
        if !include {
            continue;
        }
        checked += 1;
        let r = residual.values[ci];
        let bad = match kind {
            CheckKind::InteriorSub => r > tol,
            CheckKind::EverywhereSuper => r < -tol,
        };
        if bad {
            violations.push(Violation {
                node: ci,
                location: grid.coord(flat).iter().copied().collect(),
                residual: r,
            });
        }
    }
    let pass_fraction = if checked == 0 {
        1.0
    } else {
        (checked - violations.len()) as f64 / checked as f64
    };
    Ok(ViolationReport {
        kind,
        checked,
        violations,
        pass_fraction,
        tol,
    })
}

/// Checks the subsolution inequality F(x, u, Du, D²u) ≤ 0 (residual ≤ tol)
/// on interior nodes; boundary nodes are exempt.
pub fn check_subsolution(
    u: &ValueFunction,
    op: &DiscreteOperator,
    tol: f64,
) -> Result<ViolationReport> {
    residual_check(u, op, tol, CheckKind::InteriorSub)
}

/// Checks the supersolution inequality F(x, u, Du, D²u) ≥ 0 (residual ≥
/// −tol) on every in-domain node, boundary included.
pub fn check_supersolution(
    u: &ValueFunction,
    op: &DiscreteOperator,
    tol: f64,
) -> Result<ViolationReport> {
    residual_check(u, op, tol, CheckKind::EverywhereSuper)
}

/// One pointwise-ordering failure.
#[derive(Clone, Debug)]
pub struct GapViolation {
    pub node: usize,
    pub location: Vec<f64>,
    /// Positive amount by which the required inequality fails.
    pub gap: f64,
}

/// Pointwise ordering check outcome.
#[derive(Clone, Debug)]
pub struct OrderingReport {
    pub checked: usize,
    pub violations: Vec<GapViolation>,
    /// Most negative margin (min over nodes of rhs − lhs); ≥ −tol on pass.
    pub worst_margin: f64,
    pub tol: f64,
    pub pass: bool,
}

/// lhs ≤ rhs + tol over the selected node class.
fn ordering_check(
    lhs: &ValueFunction,
    rhs: &ValueFunction,
    tol: f64,
    interior_only: bool,
) -> Result<OrderingReport> {
    if !lhs.grid.same_layout(&rhs.grid) {
        return Err(CoreError::GridMismatch);
    }
    let grid = &lhs.grid;
    let mut checked = 0usize;
    let mut violations = Vec::new();
    let mut worst_margin = f64::INFINITY;
    for (ci, &flat) in grid.nodes.iter().enumerate() {
        if interior_only && grid.class_at(flat) != NodeClass::Interior {
            continue;
        }
        checked += 1;
        let margin = rhs.values[ci] - lhs.values[ci];
        if margin < worst_margin {
            worst_margin = margin;
        }
        if margin < -tol {
            violations.push(GapViolation {
                node: ci,
                location: grid.coord(flat).iter().copied().collect(),
                gap: -margin,
            });
        }
    }
    Ok(OrderingReport {
        checked,
        pass: violations.is_empty(),
        violations,
        worst_margin,
        tol,
    })
}

/// Sandwich check outcome: u₋ ≤ v on all of G, v ≤ w₊ on G°.
#[derive(Clone, Debug)]
pub struct SandwichReport {
    /// u₋ ≤ v over all in-domain nodes.
    pub lower: OrderingReport,
    /// v ≤ w₊ over interior nodes.
    pub upper: OrderingReport,
    pub pass: bool,
}

/// Checks u₋ ≤ v + tol on all in-domain nodes and v ≤ w₊ + tol on interior
/// nodes, reporting worst gaps and locations.
pub fn check_sandwich(
    u_minus: &ValueFunction,
    v: &ValueFunction,
    w_plus: &ValueFunction,
    tol: f64,
) -> Result<SandwichReport> {
    let lower = ordering_check(u_minus, v, tol, false)?;
    let upper = ordering_check(v, w_plus, tol, true)?;
    let pass = lower.pass && upper.pass;
    Ok(SandwichReport { lower, upper, pass })
}

/// Comparison check: sub ≤ super + tol over all in-domain nodes.
pub fn check_comparison(
    sub: &ValueFunction,
    sup: &ValueFunction,
    tol: f64,
) -> Result<OrderingReport> {
    ordering_check(sub, sup, tol, false)
}

/// Discrete limsup extension: each boundary value is raised to the maximum
/// of itself and values reachable along in-domain lattice paths toward the
/// interior (the boundary band can be more than one node deep on curved
/// domains). Interior values are unchanged; the map is idempotent and never
/// decreases boundary values.
pub fn boundary_limsup_extend(w: &ValueFunction) -> Result<ValueFunction> {
    let grid = &w.grid;
    let d = grid.dim();
    // BFS level from the interior through the in-domain lattice graph
    let mut level = vec![usize::MAX; grid.n_in_domain()];
    let mut queue = std::collections::VecDeque::new();
    for (ci, &flat) in grid.nodes.iter().enumerate() {
        if grid.class_at(flat) == NodeClass::Interior {
            level[ci] = 0;
            queue.push_back(ci);
        }
    }
    let mut order = Vec::new();
    while let Some(ci) = queue.pop_front() {
        let flat = grid.nodes[ci];
        for axis in 0..d {
            for step in [-1i64, 1] {
                if let Some(nb) = grid.neighbor(flat, axis, step) {
                    if let Some(cj) = grid.solve_index[nb] {
                        if level[cj] == usize::MAX {
                            level[cj] = level[ci] + 1;
                            order.push(cj);
                            queue.push_back(cj);
                        }
                    }
                }
            }
        }
    }
    if level.contains(&usize::MAX) {
        return Err(CoreError::UnderResolved {
            h: grid.h,
            what: "boundary node with no lattice path to the interior",
        });
    }
    // propagate in increasing level order: only strictly-lower levels feed in
    let mut values = w.values.clone();
    for &ci in &order {
        let flat = grid.nodes[ci];
        let mut best = values[ci];
        for axis in 0..d {
            for step in [-1i64, 1] {
                if let Some(nb) = grid.neighbor(flat, axis, step) {
                    if let Some(cj) = grid.solve_index[nb] {
                        if level[cj] < level[ci] {
                            best = best.max(values[cj]);
                        }
                    }
                }
            }
        }
        values[ci] = best;
    }
    ValueFunction::from_values(grid.clone(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{catalog_problem, CatalogParams};
    use crate::grid::build_grid;
    use crate::solver::{discretize, value_iteration, DiscretizeOptions, SolveOptions};

    fn operator(name: &str, h: f64, inward: bool) -> DiscreteOperator {
        let (pr, dom) = catalog_problem(name, &CatalogParams::default()).unwrap();
        let grid = build_grid(&dom, h, None).unwrap();
        let opts = DiscretizeOptions {
            boundary_drift_inward: inward,
            ..Default::default()
        };
        discretize(&pr, &grid, &opts).unwrap()
    }

    #[test]
    fn duality_of_constants_all_catalog() {
        for name in [
            "constant-cost",
            "deterministic-decay",
            "degenerate-ball",
            "outward-drift",
            "coarse-mdp",
        ] {
            let inward = name == "outward-drift";
            let op = operator(name, 0.1, inward);
            let beta = op.problem.discount();
            let hi = ValueFunction::constant(op.grid.clone(), op.problem.upper_constant() + 1.0);
            let lo = ValueFunction::constant(op.grid.clone(), op.problem.lower_constant() - 1.0);
            let tol = beta / 2.0;

            assert!(check_supersolution(&hi, &op, tol).unwrap().pass(), "{name}: hi super");
            assert!(!check_subsolution(&hi, &op, tol).unwrap().pass(), "{name}: hi sub");
            assert!(check_subsolution(&lo, &op, tol).unwrap().pass(), "{name}: lo sub");
            assert!(!check_supersolution(&lo, &op, tol).unwrap().pass(), "{name}: lo super");
        }
    }

    #[test]
    fn constant_hi_fails_sub_at_every_interior_node() {
        // F ≥ β > 0 everywhere for f̄/β + 1, so the sub check fails 100%
        let op = operator("coarse-mdp", 0.1, false);
        let hi = ValueFunction::constant(op.grid.clone(), op.problem.upper_constant() + 1.0);
        let rep = check_subsolution(&hi, &op, 0.5).unwrap();
        assert_eq!(rep.violations.len(), rep.checked);
        assert_eq!(rep.pass_fraction, 0.0);
    }

    #[test]
    fn converged_solve_passes_both_checks() {
        for name in ["constant-cost", "deterministic-decay", "degenerate-ball", "coarse-mdp"] {
            let op = operator(name, 0.1, false);
            let solver_tol = 1e-8;
            let res = value_iteration(
                &op,
                &SolveOptions {
                    tol: solver_tol,
                    ..Default::default()
                },
            )
            .unwrap();
            let tol = 10.0 * solver_tol;
            let sub = check_subsolution(&res.value, &op, tol).unwrap();
            let sup = check_supersolution(&res.value, &op, tol).unwrap();
            assert!(sub.pass(), "{name}: sub fraction {}", sub.pass_fraction);
            assert!(sup.pass(), "{name}: super fraction {}", sup.pass_fraction);
        }
    }

    #[test]
    fn sandwich_constant_bounds() {
        let op = operator("degenerate-ball", 0.1, false);
        let res = value_iteration(&op, &SolveOptions::default()).unwrap();
        let lo = ValueFunction::constant(op.grid.clone(), op.problem.lower_constant());
        let hi = ValueFunction::constant(op.grid.clone(), op.problem.upper_constant());
        let rep = check_sandwich(&lo, &res.value, &hi, 1e-9).unwrap();
        assert!(rep.pass, "lower worst {}, upper worst {}", rep.lower.worst_margin, rep.upper.worst_margin);
    }

    #[test]
    fn sandwich_equal_functions_zero_gap() {
        let op = operator("coarse-mdp", 0.1, false);
        let v = ValueFunction::constant(op.grid.clone(), 1.23);
        let rep = check_sandwich(&v, &v, &v, 0.0).unwrap();
        assert!(rep.pass);
        assert_eq!(rep.lower.worst_margin, 0.0);
        assert_eq!(rep.upper.worst_margin, 0.0);
    }

    #[test]
    fn sandwich_violated_lower_bound() {
        let op = operator("coarse-mdp", 0.1, false);
        let v = ValueFunction::constant(op.grid.clone(), 1.0);
        let above = ValueFunction::constant(op.grid.clone(), 2.0);
        let rep = check_sandwich(&above, &v, &above, 1e-12).unwrap();
        assert!(!rep.pass);
        assert_eq!(rep.lower.violations.len(), rep.lower.checked);
        assert!((rep.lower.violations[0].gap - 1.0).abs() < 1e-15);
    }

    #[test]
    fn comparison_examples() {
        let op = operator("coarse-mdp", 0.1, false);
        let lo = ValueFunction::constant(op.grid.clone(), op.problem.lower_constant());
        let hi = ValueFunction::constant(op.grid.clone(), op.problem.upper_constant());
        let rep = check_comparison(&lo, &hi, 1e-12).unwrap();
        assert!(rep.pass);
        let expected = op.problem.upper_constant() - op.problem.lower_constant();
        assert!((rep.worst_margin - expected).abs() < 1e-12);

        // reflexivity
        let res = value_iteration(&op, &SolveOptions::default()).unwrap();
        assert!(check_comparison(&res.value, &res.value, 0.0).unwrap().pass);

        // shifted failure
        let shifted = ValueFunction::from_values(
            op.grid.clone(),
            res.value.values.iter().map(|v| v + 0.5).collect(),
        )
        .unwrap();
        assert!(!check_comparison(&shifted, &res.value, 1e-12).unwrap().pass);
    }

    #[test]
    fn limsup_extend_constant_unchanged() {
        let op = operator("degenerate-ball", 0.1, false);
        let w = ValueFunction::constant(op.grid.clone(), 3.0);
        let out = boundary_limsup_extend(&w).unwrap();
        assert_eq!(out.values, w.values);
    }

    #[test]
    fn limsup_extend_raises_low_boundary_and_is_idempotent() {
        let op = operator("coarse-mdp", 0.1, false);
        let grid = &op.grid;
        let mut values = vec![1.0; grid.n_in_domain()];
        for (ci, &flat) in grid.nodes.iter().enumerate() {
            if grid.class_at(flat) == NodeClass::Boundary {
                values[ci] = -5.0;
            }
        }
        let w = ValueFunction::from_values(grid.clone(), values).unwrap();
        let once = boundary_limsup_extend(&w).unwrap();
        for (ci, &flat) in grid.nodes.iter().enumerate() {
            if grid.class_at(flat) == NodeClass::Boundary {
                assert_eq!(once.values[ci], 1.0, "boundary raised to interior max");
            } else {
                assert_eq!(once.values[ci], w.values[ci], "interior unchanged");
            }
        }
        let twice = boundary_limsup_extend(&once).unwrap();
        assert_eq!(once.values, twice.values);
    }

    #[test]
    fn limsup_extend_never_decreases_boundary() {
        let op = operator("degenerate-ball", 0.1, false);
        let grid = &op.grid;
        let values: Vec<f64> = grid
            .nodes
            .iter()
            .enumerate()
            .map(|(ci, &flat)| {
                let x = grid.coord(flat);
                // oscillating function so some boundary values exceed
                // their interior neighbours
                (7.0 * x[0]).sin() + 0.3 * ci as f64 % 1.7
            })
            .collect();
        let w = ValueFunction::from_values(grid.clone(), values).unwrap();
        let out = boundary_limsup_extend(&w).unwrap();
        for ci in 0..w.values.len() {
            assert!(out.values[ci] >= w.values[ci] - 0.0);
            if grid.class_at(grid.nodes[ci]) == NodeClass::Interior {
                assert_eq!(out.values[ci], w.values[ci]);
            }
        }
    }
}
