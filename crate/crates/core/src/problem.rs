//! Control problem definition and the Bellman operator.
//!
//! A problem is the tuple (b, σ, f, β, A): drift, diffusion, running cost,
//! discount rate and a finite sample of the compact control set. The
//! supremum in the Bellman operator is realized as a maximum over the
//! sampled controls, which turns the discretized problem into a finite MDP.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};

/// Absolute tolerance for argmax tie-breaking and symmetry checks.
pub const TIE_TOL: f64 = 1e-12;

/// Finite sample of the compact control set A ⊂ ℝᵏ.
#[derive(Clone, Debug)]
pub struct ControlSet {
    points: Vec<DVector<f64>>,
    contains_zero: bool,
}

impl ControlSet {
    /// Builds a control set from distinct control vectors.
    pub fn new(points: Vec<DVector<f64>>, contains_zero: bool) -> Result<Self> {
        if points.is_empty() {
            return Err(CoreError::EmptyControlSet);
        }
        let k = points[0].len();
        for p in &points {
            if p.len() != k {
                return Err(CoreError::DimensionMismatch {
                    expected: k,
                    got: p.len(),
                    context: "control vector",
                });
            }
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if points[i] == points[j] {
                    return Err(CoreError::InvalidParam(format!(
                        "duplicate control points at indices {i} and {j}"
                    )));
                }
            }
        }
        if contains_zero && !points.iter().any(|p| p.iter().all(|&c| c == 0.0)) {
            return Err(CoreError::MissingZeroControl);
        }
        Ok(Self {
            points,
            contains_zero,
        })
    }

    /// One-dimensional helper: controls are scalars.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        let points: Vec<_> = values.iter().map(|&v| DVector::from_vec(vec![v])).collect();
        let has_zero = values.contains(&0.0);
        Self::new(points, has_zero)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains_zero(&self) -> bool {
        self.contains_zero
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.points.iter()
    }

    pub fn control_dim(&self) -> usize {
        self.points[0].len()
    }
}

type DriftFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type DiffusionFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;
type CostFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;

/// Controlled diffusion with discounted running cost.
///
/// Immutable after construction; all evaluations are pure, so a problem can
/// be shared freely across parallel workers.
#[derive(Clone)]
pub struct ControlProblem {
    dim: usize,
    noise_dim: usize,
    drift: Arc<DriftFn>,
    diffusion: Arc<DiffusionFn>,
    running_cost: Arc<CostFn>,
    discount: f64,
    control_set: ControlSet,
    /// Lipschitz constant of (b, σ) in x. Documentation only, never enforced.
    lipschitz_bound: Option<f64>,
    /// (inf f, sup f) over G × A.
    cost_bounds: (f64, f64),
}

impl ControlProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        noise_dim: usize,
        drift: Arc<DriftFn>,
        diffusion: Arc<DiffusionFn>,
        running_cost: Arc<CostFn>,
        discount: f64,
        control_set: ControlSet,
        cost_bounds: (f64, f64),
    ) -> Result<Self> {
        if !(discount > 0.0) {
            return Err(CoreError::InvalidParam(format!(
                "discount must be strictly positive, got {discount}"
            )));
        }
        if cost_bounds.0 > cost_bounds.1 {
            return Err(CoreError::InvalidParam(format!(
                "cost bounds inverted: {} > {}",
                cost_bounds.0, cost_bounds.1
            )));
        }
        Ok(Self {
            dim,
            noise_dim,
            drift,
            diffusion,
            running_cost,
            discount,
            control_set,
            lipschitz_bound: None,
            cost_bounds,
        })
    }

    pub fn with_lipschitz_bound(mut self, k: f64) -> Self {
        self.lipschitz_bound = Some(k);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn control_set(&self) -> &ControlSet {
        &self.control_set
    }

    pub fn lipschitz_bound(&self) -> Option<f64> {
        self.lipschitz_bound
    }

    pub fn cost_bounds(&self) -> (f64, f64) {
        self.cost_bounds
    }

    /// Lower constant bound f̲/β for the value function.
    pub fn lower_constant(&self) -> f64 {
        self.cost_bounds.0 / self.discount
    }

    /// Upper constant bound f̄/β for the value function.
    pub fn upper_constant(&self) -> f64 {
        self.cost_bounds.1 / self.discount
    }

    pub fn drift(&self, x: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x, a)
    }

    pub fn diffusion(&self, x: &DVector<f64>, a: &DVector<f64>) -> DMatrix<f64> {
        (self.diffusion)(x, a)
    }

    pub fn running_cost(&self, x: &DVector<f64>, a: &DVector<f64>) -> f64 {
        (self.running_cost)(x, a)
    }

    fn check_dims(&self, x: &DVector<f64>, p: &DVector<f64>, y: &DMatrix<f64>) -> Result<()> {
        let d = self.dim;
        if x.len() != d {
            return Err(CoreError::DimensionMismatch {
                expected: d,
                got: x.len(),
                context: "state x",
            });
        }
        if p.len() != d {
            return Err(CoreError::DimensionMismatch {
                expected: d,
                got: p.len(),
                context: "gradient p",
            });
        }
        if y.nrows() != d || y.ncols() != d {
            return Err(CoreError::DimensionMismatch {
                expected: d,
                got: y.nrows().max(y.ncols()),
                context: "matrix Y",
            });
        }
        Ok(())
    }

    /// Controlled generator ℒᵃ at (x, p, Y): b(x,a)·p + ½Tr(σσᵀY).
    ///
    /// Y is symmetrized as (Y + Yᵀ)/2 before taking the trace.
    pub fn generator_apply(
        &self,
        a: &DVector<f64>,
        x: &DVector<f64>,
        p: &DVector<f64>,
        y: &DMatrix<f64>,
    ) -> Result<f64> {
        self.check_dims(x, p, y)?;
        let y_sym = (y + y.transpose()) * 0.5;
        let b = self.drift(x, a);
        if b.len() != self.dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim,
                got: b.len(),
                context: "drift output",
            });
        }
        let sigma = self.diffusion(x, a);
        if sigma.nrows() != self.dim || sigma.ncols() != self.noise_dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.dim,
                got: sigma.nrows(),
                context: "diffusion output",
            });
        }
        let a_mat = &sigma * sigma.transpose();
        Ok(b.dot(p) + 0.5 * (a_mat * y_sym).trace())
    }

    /// Bellman operator F(x, r, p, Y) = max over sampled controls of
    /// βr − f(x,a) − ℒᵃ(x, p, Y).
    pub fn bellman_value(
        &self,
        x: &DVector<f64>,
        r: f64,
        p: &DVector<f64>,
        y: &DMatrix<f64>,
    ) -> Result<f64> {
        Ok(self.bellman_argmax(x, r, p, y)?.1)
    }

    /// Maximizing control (first in list order within [`TIE_TOL`]) and value.
    pub fn bellman_argmax(
        &self,
        x: &DVector<f64>,
        r: f64,
        p: &DVector<f64>,
        y: &DMatrix<f64>,
    ) -> Result<(usize, f64)> {
        if self.control_set.is_empty() {
            return Err(CoreError::EmptyControlSet);
        }
        let mut best = f64::NEG_INFINITY;
        let mut vals = Vec::with_capacity(self.control_set.len());
        for a in self.control_set.iter() {
            let v = self.discount * r - self.running_cost(x, a) - self.generator_apply(a, x, p, y)?;
            if v > best {
                best = v;
            }
            vals.push(v);
        }
        let idx = vals
            .iter()
            .position(|&v| v >= best - TIE_TOL)
            .expect("non-empty control set has a maximizer");
        Ok((idx, best))
    }
}

impl std::fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlProblem")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("discount", &self.discount)
            .field("controls", &self.control_set.len())
            .field("cost_bounds", &self.cost_bounds)
            .finish()
    }
}
