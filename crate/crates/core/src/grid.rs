//! Cartesian grids restricted to the constraint set, and nodal value
//! functions with multilinear interpolation.
//!
//! Nodes are classified by signed distance: interior when ρ ≥ τ_b, boundary
//! when 0 ≤ ρ < τ_b, outside otherwise. A closure pass then demotes any
//! interior node with an out-of-domain axis neighbour to boundary, so upwind
//! stencils rooted at interior nodes never read outside G.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{CoreError, Result};
use crate::geometry::Domain;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Boundary,
    Outside,
}

impl NodeClass {
    pub fn in_domain(self) -> bool {
        !matches!(self, NodeClass::Outside)
    }

    pub fn label(self) -> &'static str {
        match self {
            NodeClass::Interior => "interior",
            NodeClass::Boundary => "boundary",
            NodeClass::Outside => "outside",
        }
    }
}

/// Lattice over the bounding box of a domain, with per-node classification.
#[derive(Debug)]
pub struct Grid {
    pub domain: Domain,
    /// Uniform spacing along every axis.
    pub h: f64,
    /// Boundary band width used for classification.
    pub boundary_band: f64,
    /// Nodes per axis.
    pub shape: Vec<usize>,
    /// Coordinate of lattice index 0 per axis.
    pub origin: DVector<f64>,
    /// Flat-index classification, len = prod(shape).
    pub class: Vec<NodeClass>,
    /// Flat index → compact in-domain index.
    pub solve_index: Vec<Option<usize>>,
    /// Compact in-domain index → flat index.
    pub nodes: Vec<usize>,
    /// Flat index → flat index of the nearest in-domain node (lattice BFS).
    pub nearest_in_domain: Vec<usize>,
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn total_nodes(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn n_in_domain(&self) -> usize {
        self.nodes.len()
    }

    pub fn flat(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        for (k, &m) in multi.iter().enumerate() {
            idx = idx * self.shape[k] + m;
        }
        idx
    }

    pub fn multi(&self, mut flat: usize) -> Vec<usize> {
        let d = self.dim();
        let mut out = vec![0; d];
        for k in (0..d).rev() {
            out[k] = flat % self.shape[k];
            flat /= self.shape[k];
        }
        out
    }

    pub fn coord(&self, flat: usize) -> DVector<f64> {
        let multi = self.multi(flat);
        DVector::from_iterator(
            self.dim(),
            multi
                .iter()
                .enumerate()
                .map(|(k, &m)| self.origin[k] + m as f64 * self.h),
        )
    }

    /// Axis neighbour (axis, ±1) in flat indexing; `None` when off-lattice.
    pub fn neighbor(&self, flat: usize, axis: usize, step: i64) -> Option<usize> {
        let mut multi = self.multi(flat);
        let m = multi[axis] as i64 + step;
        if m < 0 || m >= self.shape[axis] as i64 {
            return None;
        }
        multi[axis] = m as usize;
        Some(self.flat(&multi))
    }

    pub fn class_at(&self, flat: usize) -> NodeClass {
        self.class[flat]
    }

    /// Nearest lattice node to an arbitrary point (clamped to the lattice).
    pub fn nearest_node(&self, x: &DVector<f64>) -> usize {
        let mut multi = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let t = ((x[k] - self.origin[k]) / self.h).round();
            let m = (t.max(0.0) as usize).min(self.shape[k] - 1);
            multi.push(m);
        }
        self.flat(&multi)
    }

    /// Nearest in-domain node (compact index) to an arbitrary point.
    pub fn nearest_in_domain_compact(&self, x: &DVector<f64>) -> usize {
        let flat = self.nearest_node(x);
        let nd = self.nearest_in_domain[flat];
        self.solve_index[nd].expect("nearest_in_domain maps to an in-domain node")
    }

    pub fn same_layout(&self, other: &Grid) -> bool {
        self.shape == other.shape && self.origin == other.origin && self.h == other.h
    }
}

/// Builds the constrained grid. `boundary_band` defaults to `h` when `None`.
pub fn build_grid(domain: &Domain, h: f64, boundary_band: Option<f64>) -> Result<Arc<Grid>> {
    domain.validate()?;
    if !(h > 0.0) {
        return Err(CoreError::InvalidParam(format!("grid spacing must be positive, got {h}")));
    }
    let tau_b = boundary_band.unwrap_or(h);
    let d = domain.dim();
    let (lo, hi) = domain.bounding_box();

    let mut shape = Vec::with_capacity(d);
    for k in 0..d {
        // Cover the whole bounding box; overshoot nodes classify as outside.
        let n = (((hi[k] - lo[k]) / h) - 1e-9).ceil() as usize + 1;
        shape.push(n.max(2));
    }
    let total: usize = shape.iter().product();

    let mut grid = Grid {
        domain: domain.clone(),
        h,
        boundary_band: tau_b,
        shape,
        origin: lo,
        class: Vec::new(),
        solve_index: Vec::new(),
        nodes: Vec::new(),
        nearest_in_domain: Vec::new(),
    };

    let mut class = vec![NodeClass::Outside; total];
    for flat in 0..total {
        let x = grid.coord(flat);
        let rho = domain.signed_distance(&x)?;
        class[flat] = if rho >= tau_b {
            NodeClass::Interior
        } else if rho >= 0.0 {
            NodeClass::Boundary
        } else {
            NodeClass::Outside
        };
    }
    grid.class = class;

    // Closure pass: interior nodes must have every axis neighbour in-domain.
    let mut demote = Vec::new();
    for flat in 0..total {
        if grid.class[flat] != NodeClass::Interior {
            continue;
        }
        let mut ok = true;
        'axes: for axis in 0..d {
            for step in [-1i64, 1] {
                match grid.neighbor(flat, axis, step) {
                    Some(nb) if grid.class[nb].in_domain() => {}
                    _ => {
                        ok = false;
                        break 'axes;
                    }
                }
            }
        }
        if !ok {
            demote.push(flat);
        }
    }
    for flat in demote {
        grid.class[flat] = NodeClass::Boundary;
    }

    let interior = grid
        .class
        .iter()
        .filter(|c| matches!(c, NodeClass::Interior))
        .count();
    if interior == 0 {
        return Err(CoreError::UnderResolved {
            h,
            what: "interior nodes",
        });
    }

    let mut solve_index = vec![None; total];
    let mut nodes = Vec::new();
    for flat in 0..total {
        if grid.class[flat].in_domain() {
            solve_index[flat] = Some(nodes.len());
            nodes.push(flat);
        }
    }
    grid.solve_index = solve_index;
    grid.nodes = nodes;

    // Multi-source BFS from in-domain nodes over the lattice graph.
    let mut nearest = vec![usize::MAX; total];
    let mut queue = VecDeque::new();
    for &flat in &grid.nodes {
        nearest[flat] = flat;
        queue.push_back(flat);
    }
    while let Some(flat) = queue.pop_front() {
        for axis in 0..d {
            for step in [-1i64, 1] {
                if let Some(nb) = grid.neighbor(flat, axis, step) {
                    if nearest[nb] == usize::MAX {
                        nearest[nb] = nearest[flat];
                        queue.push_back(nb);
                    }
                }
            }
        }
    }
    grid.nearest_in_domain = nearest;

    Ok(Arc::new(grid))
}

/// Grid function over the in-domain nodes.
#[derive(Clone, Debug)]
pub struct ValueFunction {
    pub grid: Arc<Grid>,
    /// One value per compact in-domain index.
    pub values: Vec<f64>,
}

impl ValueFunction {
    pub fn constant(grid: Arc<Grid>, c: f64) -> Self {
        let n = grid.n_in_domain();
        Self {
            grid,
            values: vec![c; n],
        }
    }

    pub fn from_values(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_in_domain() {
            return Err(CoreError::GridMismatch);
        }
        Ok(Self { grid, values })
    }

    /// Value of the node holding a given flat lattice index, falling back to
    /// the nearest in-domain node for outside lattice nodes.
    fn value_at_flat(&self, flat: usize) -> f64 {
        let nd = self.grid.nearest_in_domain[flat];
        self.values[self.grid.solve_index[nd].expect("in-domain")]
    }

    /// Multilinear interpolation. Returns `(value, fell_back)`; `fell_back`
    /// is set when the query was outside the lattice hull or a cell corner
    /// had to be substituted by a nearest in-domain node.
    pub fn interpolate(&self, x: &DVector<f64>) -> (f64, bool) {
        let grid = &self.grid;
        let d = grid.dim();
        let mut base = Vec::with_capacity(d);
        let mut frac = Vec::with_capacity(d);
        let mut fell_back = false;
        for k in 0..d {
            let t = (x[k] - grid.origin[k]) / grid.h;
            let max_cell = (grid.shape[k] - 2) as f64;
            let clamped = t.clamp(0.0, max_cell + 1.0);
            if (clamped - t).abs() > 1e-12 {
                fell_back = true;
            }
            let cell = clamped.floor().min(max_cell);
            base.push(cell as usize);
            frac.push(clamped - cell);
        }
        let mut acc = 0.0;
        let mut multi = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            for k in 0..d {
                if corner & (1 << k) != 0 {
                    multi[k] = base[k] + 1;
                    weight *= frac[k];
                } else {
                    multi[k] = base[k];
                    weight *= 1.0 - frac[k];
                }
            }
            if weight == 0.0 {
                continue;
            }
            let flat = grid.flat(&multi);
            if !grid.class[flat].in_domain() {
                fell_back = true;
            }
            acc += weight * self.value_at_flat(flat);
        }
        (acc, fell_back)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_grid_example() {
        // box [−1,1], h=0.5, τ_b=0.25 → nodes {−1,−0.5,0,0.5,1};
        // {−0.5,0,0.5} interior, {±1} boundary
        let dom = Domain::symmetric_box(1, 1.0);
        let grid = build_grid(&dom, 0.5, Some(0.25)).unwrap();
        assert_eq!(grid.shape, vec![5]);
        let classes: Vec<_> = (0..5).map(|i| grid.class_at(i)).collect();
        assert_eq!(
            classes,
            vec![
                NodeClass::Boundary,
                NodeClass::Interior,
                NodeClass::Interior,
                NodeClass::Interior,
                NodeClass::Boundary
            ]
        );
    }

    #[test]
    fn under_resolved_ball_errors() {
        let dom = Domain::unit_ball(2);
        assert!(matches!(
            build_grid(&dom, 2.0, None),
            Err(CoreError::UnderResolved { .. })
        ));
    }

    #[test]
    fn classification_partitions_lattice() {
        let dom = Domain::unit_ball(2);
        let grid = build_grid(&dom, 0.2, None).unwrap();
        let (mut i, mut b, mut o) = (0, 0, 0);
        for c in &grid.class {
            match c {
                NodeClass::Interior => i += 1,
                NodeClass::Boundary => b += 1,
                NodeClass::Outside => o += 1,
            }
        }
        assert_eq!(i + b + o, grid.total_nodes());
        assert!(i > 0 && b > 0 && o > 0);
    }

    #[test]
    fn closure_rule_no_interior_node_touches_outside() {
        for dom in [
            Domain::unit_ball(2),
            Domain::symmetric_box(2, 1.0),
            Domain::Smooth {
                level: crate::geometry::LevelSet::Ellipse {
                    semi_axes: vec![1.0, 0.6],
                },
            },
        ] {
            let grid = build_grid(&dom, 0.11, None).unwrap();
            for flat in 0..grid.total_nodes() {
                if grid.class_at(flat) != NodeClass::Interior {
                    continue;
                }
                for axis in 0..grid.dim() {
                    for step in [-1i64, 1] {
                        let nb = grid.neighbor(flat, axis, step).expect("interior has neighbors");
                        assert!(grid.class_at(nb).in_domain());
                    }
                }
            }
        }
    }

    #[test]
    fn boundary_nodes_lie_within_h_of_boundary() {
        for h in [0.2, 0.1] {
            let dom = Domain::unit_ball(2);
            let grid = build_grid(&dom, h, None).unwrap();
            for flat in 0..grid.total_nodes() {
                if grid.class_at(flat) == NodeClass::Boundary {
                    let rho = dom.signed_distance(&grid.coord(flat)).unwrap();
                    assert!(rho >= 0.0, "boundary node outside G");
                    // direct band members are within τ_b=h; closure demotions
                    // sit one spacing deeper at most
                    assert!(rho <= 2.0 * h + 1e-12);
                }
            }
        }
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let dom = Domain::symmetric_box(2, 1.0);
        let grid = build_grid(&dom, 0.25, None).unwrap();
        let mut values = vec![0.0; grid.n_in_domain()];
        for (ci, &flat) in grid.nodes.iter().enumerate() {
            let x = grid.coord(flat);
            values[ci] = 1.0 + 2.0 * x[0] - 0.5 * x[1];
        }
        let vf = ValueFunction::from_values(grid, values).unwrap();
        let x = DVector::from_vec(vec![0.13, -0.42]);
        let (val, fb) = vf.interpolate(&x);
        assert!(!fb);
        assert!((val - (1.0 + 2.0 * 0.13 - 0.5 * (-0.42))).abs() < 1e-12);
    }

    #[test]
    fn interpolation_off_hull_falls_back() {
        let dom = Domain::symmetric_box(1, 1.0);
        let grid = build_grid(&dom, 0.5, None).unwrap();
        let vf = ValueFunction::constant(grid, 3.0);
        let (val, fb) = vf.interpolate(&DVector::from_vec(vec![5.0]));
        assert_eq!(val, 3.0);
        assert!(fb);
    }

    #[test]
    fn nearest_in_domain_total() {
        let dom = Domain::unit_ball(2);
        let grid = build_grid(&dom, 0.3, None).unwrap();
        for flat in 0..grid.total_nodes() {
            let nd = grid.nearest_in_domain[flat];
            assert!(grid.class_at(nd).in_domain());
        }
    }
}
