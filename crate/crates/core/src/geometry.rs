//! Constraint-set geometry: membership, signed distance, boundary normals
//! and the distance Hessian.
//!
//! Balls and boxes use exact formulas. Smooth domains enter through a small
//! catalog of level sets g with G = {g ≤ 0}; their signed distance is the
//! first-order approximation −g/|∇g|, accurate near the boundary, which is
//! where C² regularity of the distance is actually used.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Minimum gradient norm for level-set queries.
pub const MIN_LEVEL_GRAD: f64 = 1e-8;

/// Finite-difference step for level-set distance Hessians.
pub const HESSIAN_FD_STEP: f64 = 1e-4;

/// Named level sets for smooth domains, G = {g ≤ 0}.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LevelSet {
    /// g(x) = Σ (xᵢ/sᵢ)² − 1.
    Ellipse { semi_axes: Vec<f64> },
    /// g(x) = Σ |xᵢ/sᵢ|^p − 1 with p ≥ 2.
    Superellipse { semi_axes: Vec<f64>, exponent: f64 },
}

impl LevelSet {
    fn dim(&self) -> usize {
        match self {
            LevelSet::Ellipse { semi_axes } => semi_axes.len(),
            LevelSet::Superellipse { semi_axes, .. } => semi_axes.len(),
        }
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            LevelSet::Ellipse { semi_axes } => {
                x.iter()
                    .zip(semi_axes)
                    .map(|(xi, si)| (xi / si) * (xi / si))
                    .sum::<f64>()
                    - 1.0
            }
            LevelSet::Superellipse {
                semi_axes,
                exponent,
            } => {
                x.iter()
                    .zip(semi_axes)
                    .map(|(xi, si)| (xi / si).abs().powf(*exponent))
                    .sum::<f64>()
                    - 1.0
            }
        }
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            LevelSet::Ellipse { semi_axes } => DVector::from_iterator(
                x.len(),
                x.iter().zip(semi_axes).map(|(xi, si)| 2.0 * xi / (si * si)),
            ),
            LevelSet::Superellipse {
                semi_axes,
                exponent,
            } => DVector::from_iterator(
                x.len(),
                x.iter().zip(semi_axes).map(|(xi, si)| {
                    let t = xi / si;
                    exponent * t.abs().powf(exponent - 1.0) * t.signum() / si
                }),
            ),
        }
    }
}

/// Node / point classification relative to the constraint set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Interior,
    Boundary,
    Outside,
}

/// Closed constraint set G with nonempty interior.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Domain {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    Smooth { level: LevelSet },
}

impl Domain {
    pub fn unit_ball(dim: usize) -> Self {
        Domain::Ball {
            center: vec![0.0; dim],
            radius: 1.0,
        }
    }

    pub fn symmetric_box(dim: usize, half_width: f64) -> Self {
        Domain::Box {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Domain::Box { lower, upper } => {
                if lower.len() != upper.len() || lower.is_empty() {
                    return Err(CoreError::InvalidParam(
                        "box bounds must be non-empty and of equal length".into(),
                    ));
                }
                for (lo, hi) in lower.iter().zip(upper) {
                    if !(lo < hi) {
                        return Err(CoreError::InvalidParam(format!(
                            "box has empty interior: lower {lo} >= upper {hi}"
                        )));
                    }
                }
            }
            Domain::Ball { center, radius } => {
                if center.is_empty() {
                    return Err(CoreError::InvalidParam("ball center must be non-empty".into()));
                }
                if !(radius > &0.0) {
                    return Err(CoreError::InvalidParam(format!(
                        "ball radius must be positive, got {radius}"
                    )));
                }
            }
            Domain::Smooth { level } => {
                let axes = match level {
                    LevelSet::Ellipse { semi_axes } => semi_axes,
                    LevelSet::Superellipse { semi_axes, exponent } => {
                        if !(exponent >= &2.0) {
                            return Err(CoreError::InvalidParam(format!(
                                "superellipse exponent must be >= 2, got {exponent}"
                            )));
                        }
                        semi_axes
                    }
                };
                if axes.is_empty() || axes.iter().any(|s| !(s > &0.0)) {
                    return Err(CoreError::InvalidParam(
                        "level-set semi-axes must be positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Box { lower, .. } => lower.len(),
            Domain::Ball { center, .. } => center.len(),
            Domain::Smooth { level } => level.dim(),
        }
    }

    /// True when the origin lies in G°. A convenience the catalog problems
    /// rely on; callers warn rather than fail when violated.
    pub fn origin_interior(&self) -> bool {
        let zero = DVector::zeros(self.dim());
        matches!(self.classify(&zero, 0.0), Region::Interior)
    }

    /// Axis-aligned bounding box of G.
    pub fn bounding_box(&self) -> (DVector<f64>, DVector<f64>) {
        match self {
            Domain::Box { lower, upper } => (
                DVector::from_vec(lower.clone()),
                DVector::from_vec(upper.clone()),
            ),
            Domain::Ball { center, radius } => {
                let c = DVector::from_vec(center.clone());
                (c.map(|ci| ci - radius), c.map(|ci| ci + radius))
            }
            Domain::Smooth { level } => {
                let axes = match level {
                    LevelSet::Ellipse { semi_axes } => semi_axes,
                    LevelSet::Superellipse { semi_axes, .. } => semi_axes,
                };
                (
                    DVector::from_iterator(axes.len(), axes.iter().map(|s| -s)),
                    DVector::from_vec(axes.clone()),
                )
            }
        }
    }

    /// Classification with boundary band |ρ| ≤ tol.
    pub fn classify(&self, x: &DVector<f64>, boundary_tol: f64) -> Region {
        let rho = self
            .signed_distance(x)
            .unwrap_or(f64::NEG_INFINITY);
        if rho > boundary_tol {
            Region::Interior
        } else if rho >= -boundary_tol {
            Region::Boundary
        } else {
            Region::Outside
        }
    }

    /// Signed distance to ∂G: positive in G°, zero on ∂G, negative outside.
    ///
    /// Exact for balls and boxes; −g/|∇g| for level-set domains.
    pub fn signed_distance(&self, x: &DVector<f64>) -> Result<f64> {
        match self {
            Domain::Ball { center, radius } => {
                let c = DVector::from_vec(center.clone());
                Ok(radius - (x - c).norm())
            }
            Domain::Box { lower, upper } => {
                // Inside: min face margin. Outside: minus distance to the box.
                let mut inside_margin = f64::INFINITY;
                let mut outside_sq = 0.0;
                for ((&xi, &lo), &hi) in x.iter().zip(lower).zip(upper) {
                    let m = (xi - lo).min(hi - xi);
                    inside_margin = inside_margin.min(m);
                    if m < 0.0 {
                        outside_sq += m * m;
                    }
                }
                if inside_margin >= 0.0 {
                    Ok(inside_margin)
                } else {
                    Ok(-outside_sq.sqrt())
                }
            }
            Domain::Smooth { level } => {
                let g = level.value(x);
                let grad = level.gradient(x);
                let n = grad.norm();
                if n < MIN_LEVEL_GRAD {
                    return Err(CoreError::DegenerateLevelSet {
                        min_grad: MIN_LEVEL_GRAD,
                        location: x.iter().copied().collect(),
                    });
                }
                Ok(-g / n)
            }
        }
    }

    /// Unit outer normal n(x) for x near ∂G; −n(x) = Dρ(x).
    pub fn outward_normal(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Domain::Ball { center, .. } => {
                let c = DVector::from_vec(center.clone());
                let r = x - c;
                let norm = r.norm();
                if norm < 1e-12 {
                    return Err(CoreError::NormalUndefined {
                        location: x.iter().copied().collect(),
                    });
                }
                Ok(r / norm)
            }
            Domain::Box { lower, upper } => {
                // Nearest-face rule; corner/edge queries (tied margins) error out.
                let d = x.len();
                let mut best_axis = 0usize;
                let mut best_sign = 1.0;
                let mut best_margin = f64::INFINITY;
                let mut second_margin = f64::INFINITY;
                for i in 0..d {
                    for (margin, sign) in [(x[i] - lower[i], -1.0), (upper[i] - x[i], 1.0)] {
                        if margin < best_margin {
                            second_margin = best_margin;
                            best_margin = margin;
                            best_axis = i;
                            best_sign = sign;
                        } else if margin < second_margin {
                            second_margin = margin;
                        }
                    }
                }
                if (second_margin - best_margin).abs() < 1e-12 {
                    return Err(CoreError::NormalUndefined {
                        location: x.iter().copied().collect(),
                    });
                }
                let mut n = DVector::zeros(d);
                n[best_axis] = best_sign;
                Ok(n)
            }
            Domain::Smooth { level } => {
                let grad = level.gradient(x);
                let n = grad.norm();
                if n < MIN_LEVEL_GRAD {
                    return Err(CoreError::DegenerateLevelSet {
                        min_grad: MIN_LEVEL_GRAD,
                        location: x.iter().copied().collect(),
                    });
                }
                Ok(grad / n)
            }
        }
    }

    /// Hessian of the signed distance D²ρ(x) for x near ∂G.
    pub fn hessian_distance(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.dim();
        match self {
            Domain::Ball { center, .. } => {
                let c = DVector::from_vec(center.clone());
                let r = x - c;
                let norm = r.norm();
                if norm < 1e-12 {
                    return Err(CoreError::NormalUndefined {
                        location: x.iter().copied().collect(),
                    });
                }
                if d == 1 {
                    // ρ is affine away from the center
                    return Ok(DMatrix::zeros(1, 1));
                }
                let hat = r / norm;
                let mut h = DMatrix::identity(d, d);
                h -= &hat * hat.transpose();
                Ok(-h / norm)
            }
            Domain::Box { .. } => {
                // flat faces
                self.outward_normal(x)?;
                Ok(DMatrix::zeros(d, d))
            }
            Domain::Smooth { .. } => {
                // Central finite differences of the signed distance.
                let h = HESSIAN_FD_STEP;
                let mut hess = DMatrix::zeros(d, d);
                let rho0 = self.signed_distance(x)?;
                for i in 0..d {
                    for j in i..d {
                        let val = if i == j {
                            let mut xp = x.clone();
                            let mut xm = x.clone();
                            xp[i] += h;
                            xm[i] -= h;
                            (self.signed_distance(&xp)? - 2.0 * rho0
                                + self.signed_distance(&xm)?)
                                / (h * h)
                        } else {
                            let mut xpp = x.clone();
                            let mut xpm = x.clone();
                            let mut xmp = x.clone();
                            let mut xmm = x.clone();
                            xpp[i] += h;
                            xpp[j] += h;
                            xpm[i] += h;
                            xpm[j] -= h;
                            xmp[i] -= h;
                            xmp[j] += h;
                            xmm[i] -= h;
                            xmm[j] -= h;
                            (self.signed_distance(&xpp)? - self.signed_distance(&xpm)?
                                - self.signed_distance(&xmp)?
                                + self.signed_distance(&xmm)?)
                                / (4.0 * h * h)
                        };
                        hess[(i, j)] = val;
                        hess[(j, i)] = val;
                    }
                }
                Ok(hess)
            }
        }
    }

    /// Nearest point of G (exact for ball/box, damped level-set steps otherwise).
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Domain::Ball { center, radius } => {
                let c = DVector::from_vec(center.clone());
                let r = x - &c;
                let norm = r.norm();
                if norm <= *radius {
                    x.clone()
                } else {
                    c + r * (*radius / norm)
                }
            }
            Domain::Box { lower, upper } => DVector::from_iterator(
                x.len(),
                x.iter()
                    .zip(lower)
                    .zip(upper)
                    .map(|((&xi, &lo), &hi)| xi.clamp(lo, hi)),
            ),
            Domain::Smooth { level } => {
                let mut y = x.clone();
                for _ in 0..8 {
                    let g = level.value(&y);
                    if g <= 0.0 {
                        break;
                    }
                    let grad = level.gradient(&y);
                    let n2 = grad.norm_squared();
                    if n2 < MIN_LEVEL_GRAD * MIN_LEVEL_GRAD {
                        break;
                    }
                    y -= grad * (g / n2);
                }
                y
            }
        }
    }
}
