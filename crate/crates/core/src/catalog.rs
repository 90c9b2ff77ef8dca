//! Named dynamics/cost functions and the built-in problem catalog.
//!
//! Configs stay declarative: drift, diffusion and cost are chosen from this
//! catalog by name with numeric parameters, never parsed as expressions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::Domain;
use crate::problem::{ControlProblem, ControlSet};

/// Catalog problem names addressable from configs and the CLI.
pub const CATALOG_NAMES: &[&str] = &[
    "constant-cost",
    "deterministic-decay",
    "degenerate-ball",
    "outward-drift",
    "coarse-mdp",
];

fn default_rate() -> f64 {
    1.0
}

/// Drift selections b(x, a).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftSpec {
    /// b = 0.
    Zero,
    /// b = −rate·x.
    Restoring {
        #[serde(default = "default_rate")]
        rate: f64,
    },
    /// b = +rate·x.
    Outward {
        #[serde(default = "default_rate")]
        rate: f64,
    },
    /// b = a − x (control dimension must equal the state dimension).
    TowardControl,
}

/// Diffusion selections σ(x, a), always isotropic d×d.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DiffusionSpec {
    /// No noise at all (noise dimension 0).
    None,
    /// σ = scale·I.
    ConstantIso { scale: f64 },
    /// σ = scale·(1 − |x−center|²/radius²)·I, optionally multiplied by the
    /// first control component. Vanishes on the sphere |x−center| = radius.
    DegenerateIso {
        #[serde(default = "default_rate")]
        scale: f64,
        #[serde(default)]
        control_scaled: bool,
        center: Option<Vec<f64>>,
        radius: Option<f64>,
    },
}

/// Running-cost selections f(x, a).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostSpec {
    Constant { c: f64 },
    /// f = |x|².
    QuadraticState,
    /// f = |x|² + control_weight·|a|².
    Quadratic { control_weight: f64 },
}

/// Declarative problem description (inline configs and catalog expansion).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub domain: Domain,
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    pub cost: CostSpec,
    pub beta: f64,
    /// Finite sample of the compact control set.
    pub controls: Vec<Vec<f64>>,
    /// Explicit (f̲, f̄); derived from the cost selection when omitted.
    pub cost_bounds: Option<(f64, f64)>,
}

fn degenerate_geometry(
    spec_center: &Option<Vec<f64>>,
    spec_radius: &Option<f64>,
    domain: &Domain,
) -> Result<(DVector<f64>, f64)> {
    if let (Some(c), Some(r)) = (spec_center, spec_radius) {
        return Ok((DVector::from_vec(c.clone()), *r));
    }
    match domain {
        Domain::Ball { center, radius } => {
            Ok((DVector::from_vec(center.clone()), *radius))
        }
        Domain::Box { lower, upper } => {
            let c: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect();
            let r = lower
                .iter()
                .zip(upper)
                .map(|(l, u)| 0.5 * (u - l))
                .fold(f64::INFINITY, f64::min);
            Ok((DVector::from_vec(c), r))
        }
        _ => Err(CoreError::InvalidParam(
            "degenerate-iso diffusion needs explicit center/radius for this domain".into(),
        )),
    }
}

impl ProblemSpec {
    /// Derived (f̲, f̄) over G × A; conservative, not necessarily tight.
    fn derived_cost_bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.domain.bounding_box();
        // max |x|² over bounding-box corners
        let max_sq: f64 = (0..lo.len())
            .map(|k| lo[k].abs().max(hi[k].abs()).powi(2))
            .sum();
        let max_a_sq = self
            .controls
            .iter()
            .map(|a| a.iter().map(|c| c * c).sum::<f64>())
            .fold(0.0, f64::max);
        match &self.cost {
            CostSpec::Constant { c } => (*c, *c),
            CostSpec::QuadraticState => (0.0, max_sq),
            CostSpec::Quadratic { control_weight } => (0.0, max_sq + control_weight * max_a_sq),
        }
    }

    pub fn build(&self) -> Result<Arc<ControlProblem>> {
        self.domain.validate()?;
        let d = self.domain.dim();
        let points: Vec<DVector<f64>> = self
            .controls
            .iter()
            .map(|a| DVector::from_vec(a.clone()))
            .collect();
        let has_zero = points.iter().any(|p| p.iter().all(|&c| c == 0.0));
        let control_set = ControlSet::new(points, has_zero)?;

        let drift: Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync> =
            match &self.drift {
                DriftSpec::Zero => Arc::new(move |_x: &DVector<f64>, _a: &DVector<f64>| {
                    DVector::zeros(d)
                }),
                DriftSpec::Restoring { rate } => {
                    let k = *rate;
                    Arc::new(move |x: &DVector<f64>, _a: &DVector<f64>| x * -k)
                }
                DriftSpec::Outward { rate } => {
                    let k = *rate;
                    Arc::new(move |x: &DVector<f64>, _a: &DVector<f64>| x * k)
                }
                DriftSpec::TowardControl => {
                    if control_set.control_dim() != d {
                        return Err(CoreError::DimensionMismatch {
                            expected: d,
                            got: control_set.control_dim(),
                            context: "toward-control drift needs control dim = state dim",
                        });
                    }
                    Arc::new(move |x: &DVector<f64>, a: &DVector<f64>| a - x)
                }
            };

        let (noise_dim, diffusion): (
            usize,
            Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>,
        ) = match &self.diffusion {
            DiffusionSpec::None => (
                0,
                Arc::new(move |_x: &DVector<f64>, _a: &DVector<f64>| DMatrix::zeros(d, 0)),
            ),
            DiffusionSpec::ConstantIso { scale } => {
                let s = *scale;
                (
                    d,
                    Arc::new(move |_x: &DVector<f64>, _a: &DVector<f64>| {
                        DMatrix::identity(d, d) * s
                    }),
                )
            }
            DiffusionSpec::DegenerateIso {
                scale,
                control_scaled,
                center,
                radius,
            } => {
                let (c, r) = degenerate_geometry(center, radius, &self.domain)?;
                let s = *scale;
                let ctrl = *control_scaled;
                (
                    d,
                    Arc::new(move |x: &DVector<f64>, a: &DVector<f64>| {
                        let factor = 1.0 - (x - &c).norm_squared() / (r * r);
                        let amp = if ctrl { a[0] } else { 1.0 };
                        DMatrix::identity(d, d) * (s * amp * factor)
                    }),
                )
            }
        };

        let running_cost: Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync> =
            match &self.cost {
                CostSpec::Constant { c } => {
                    let c = *c;
                    Arc::new(move |_x: &DVector<f64>, _a: &DVector<f64>| c)
                }
                CostSpec::QuadraticState => {
                    Arc::new(|x: &DVector<f64>, _a: &DVector<f64>| x.norm_squared())
                }
                CostSpec::Quadratic { control_weight } => {
                    let lam = *control_weight;
                    Arc::new(move |x: &DVector<f64>, a: &DVector<f64>| {
                        x.norm_squared() + lam * a.norm_squared()
                    })
                }
            };

        let bounds = self.cost_bounds.unwrap_or_else(|| self.derived_cost_bounds());
        Ok(Arc::new(ControlProblem::new(
            d,
            noise_dim,
            drift,
            diffusion,
            running_cost,
            self.beta,
            control_set,
            bounds,
        )?))
    }
}

/// Tunable parameters for catalog problems; unused fields are ignored by
/// problems that do not reference them.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogParams {
    /// Constant cost level for "constant-cost".
    pub c: f64,
    /// Discount rate β.
    pub beta: f64,
    /// Half-width L of the interval domain.
    pub length: f64,
    /// Control-effort weight λ.
    pub lambda: f64,
    /// State dimension where the problem is dimension-generic.
    pub dim: usize,
    /// Override for the control sample (scalar controls).
    pub controls: Option<Vec<f64>>,
}

impl Default for CatalogParams {
    fn default() -> Self {
        Self {
            c: 2.0,
            beta: 1.0,
            length: 1.0,
            lambda: 0.1,
            dim: 2,
            controls: None,
        }
    }
}

/// Expands a catalog name to a declarative problem description.
pub fn catalog_spec(name: &str, params: &CatalogParams) -> Result<ProblemSpec> {
    let scalar_controls = |default: &[f64]| -> Vec<Vec<f64>> {
        params
            .controls
            .clone()
            .unwrap_or_else(|| default.to_vec())
            .into_iter()
            .map(|a| vec![a])
            .collect()
    };
    let spec = match name {
        "constant-cost" => ProblemSpec {
            domain: Domain::symmetric_box(1, params.length),
            drift: DriftSpec::Zero,
            diffusion: DiffusionSpec::None,
            cost: CostSpec::Constant { c: params.c },
            beta: params.beta,
            controls: scalar_controls(&[0.0]),
            cost_bounds: None,
        },
        "deterministic-decay" => ProblemSpec {
            domain: Domain::symmetric_box(1, params.length),
            drift: DriftSpec::Restoring { rate: 1.0 },
            diffusion: DiffusionSpec::None,
            cost: CostSpec::QuadraticState,
            beta: params.beta,
            controls: scalar_controls(&[0.0]),
            cost_bounds: None,
        },
        "degenerate-ball" => ProblemSpec {
            domain: Domain::unit_ball(params.dim),
            drift: DriftSpec::Restoring { rate: 1.0 },
            diffusion: DiffusionSpec::DegenerateIso {
                scale: 1.0,
                control_scaled: true,
                center: None,
                radius: None,
            },
            cost: CostSpec::Quadratic {
                control_weight: params.lambda,
            },
            beta: params.beta,
            controls: scalar_controls(&[0.0, 0.5, 1.0]),
            cost_bounds: None,
        },
        "outward-drift" => ProblemSpec {
            domain: Domain::unit_ball(params.dim),
            drift: DriftSpec::Outward { rate: 1.0 },
            diffusion: DiffusionSpec::None,
            cost: CostSpec::QuadraticState,
            beta: params.beta,
            controls: scalar_controls(&[0.0]),
            cost_bounds: None,
        },
        "coarse-mdp" => ProblemSpec {
            domain: Domain::symmetric_box(1, 1.0),
            drift: DriftSpec::TowardControl,
            diffusion: DiffusionSpec::DegenerateIso {
                scale: 0.3,
                control_scaled: false,
                center: Some(vec![0.0]),
                radius: Some(1.0),
            },
            cost: CostSpec::Quadratic {
                control_weight: params.lambda,
            },
            beta: params.beta,
            controls: scalar_controls(&[-0.5, 0.0, 0.5]),
            cost_bounds: None,
        },
        other => {
            return Err(CoreError::InvalidParam(format!(
                "unknown catalog problem \"{other}\"; known: {CATALOG_NAMES:?}"
            )))
        }
    };
    Ok(spec)
}

/// Convenience: build a catalog problem and its domain in one call.
pub fn catalog_problem(
    name: &str,
    params: &CatalogParams,
) -> Result<(Arc<ControlProblem>, Domain)> {
    let spec = catalog_spec(name, params)?;
    let domain = spec.domain.clone();
    let problem = spec.build()?;
    Ok((problem, domain))
}
