//! Per-node control choices and feedback lookup.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{CoreError, Result};
use crate::grid::Grid;
use crate::problem::ControlSet;

/// Control index per in-domain grid node.
#[derive(Clone, Debug)]
pub struct Policy {
    pub grid: Arc<Grid>,
    pub control_set: ControlSet,
    /// One control index per compact in-domain node.
    pub control_index: Vec<usize>,
}

impl Policy {
    pub fn new(grid: Arc<Grid>, control_set: ControlSet, control_index: Vec<usize>) -> Result<Self> {
        if control_index.len() != grid.n_in_domain() {
            return Err(CoreError::GridMismatch);
        }
        if let Some(&bad) = control_index.iter().find(|&&i| i >= control_set.len()) {
            return Err(CoreError::InvalidParam(format!(
                "policy references control index {bad} outside the control set"
            )));
        }
        Ok(Self {
            grid,
            control_set,
            control_index,
        })
    }

    pub fn constant(grid: Arc<Grid>, control_set: ControlSet, index: usize) -> Result<Self> {
        let n = grid.n_in_domain();
        Self::new(grid, control_set, vec![index; n])
    }
}

/// State-to-control map used by the simulator: either a fixed control or a
/// nearest-node lookup into a grid policy.
#[derive(Clone, Debug)]
pub enum FeedbackPolicy {
    Constant(DVector<f64>),
    Grid(Policy),
}

impl FeedbackPolicy {
    /// Control applied at state `x`.
    pub fn control_at(&self, x: &DVector<f64>) -> &DVector<f64> {
        match self {
            FeedbackPolicy::Constant(a) => a,
            FeedbackPolicy::Grid(policy) => {
                let ci = policy.grid.nearest_in_domain_compact(x);
                policy.control_set.point(policy.control_index[ci])
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            FeedbackPolicy::Constant(a) => {
                format!("constant control {:?}", a.iter().collect::<Vec<_>>())
            }
            FeedbackPolicy::Grid(p) => format!(
                "grid policy on {} nodes, {} controls",
                p.grid.n_in_domain(),
                p.control_set.len()
            ),
        }
    }
}
