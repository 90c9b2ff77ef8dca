//! Admissibility geometry at the boundary.
//!
//! On a C² boundary the pointwise viability condition reduces to: some
//! control makes the diffusion tangentially degenerate (σᵀn = 0) while the
//! inward generator −n·b + ½Tr(σσᵀD²ρ) stays nonnegative. The strong
//! variant (full σ = 0 and strictly inward drift under a fixed feedback map)
//! is what the comparison/uniqueness machinery needs.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{CoreError, Result};
use crate::geometry::Domain;
use crate::grid::{Grid, NodeClass};
use crate::policy::{FeedbackPolicy, Policy};
use crate::problem::ControlProblem;

/// Tolerances for viability checks.
#[derive(Clone, Copy, Debug)]
pub struct ViabilityTols {
    /// Tangency residual bound for |σᵀ(x,a)n(x)|.
    pub tol_sigma: f64,
    /// Slack allowed below zero for the inward-drift value.
    pub tol_drift: f64,
    /// Strict inward-drift margin for the strong condition.
    pub delta_strict: f64,
    /// Fraction of each box-face extent excluded near edges when sampling.
    pub edge_margin_frac: f64,
}

impl Default for ViabilityTols {
    fn default() -> Self {
        Self {
            tol_sigma: 1e-8,
            tol_drift: 0.0,
            delta_strict: 1e-6,
            edge_margin_frac: 0.05,
        }
    }
}

/// Outcome of the pointwise check at one boundary sample.
#[derive(Clone, Debug)]
pub struct ViabilitySample {
    pub location: DVector<f64>,
    /// Control maximizing the inward value among tangency-feasible controls,
    /// or the minimal-residual control when none is feasible.
    pub best_control: usize,
    pub tangency_residual: f64,
    pub inward_value: f64,
    pub pass: bool,
    /// Strong condition (σ_ψ = 0, −n·b_ψ > 0) under the supplied feedback.
    pub strong_pass: Option<bool>,
}

/// Aggregate over a boundary scan.
#[derive(Clone, Debug)]
pub struct ViabilityReport {
    pub samples: Vec<ViabilitySample>,
    pub n_pass: usize,
    pub n_strong_pass: Option<usize>,
    pub worst_tangency: f64,
    pub worst_inward: f64,
}

impl ViabilityReport {
    pub fn pass_fraction(&self) -> f64 {
        self.n_pass as f64 / self.samples.len() as f64
    }

    pub fn all_pass(&self) -> bool {
        self.n_pass == self.samples.len()
    }
}

/// How each node of a constructed feedback map got its control.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    /// Boundary node, control chosen by the pointwise viability rule.
    BoundaryViable,
    /// Interior node, control minimizing the running cost.
    InteriorCostArgmin,
    /// Boundary node where the normal is undefined (box corner/edge);
    /// interior rule applied instead.
    NormalUndefinedFallback,
}

/// Grid feedback map with per-node provenance.
#[derive(Clone, Debug)]
pub struct FeedbackMap {
    pub policy: Policy,
    pub provenance: Vec<Provenance>,
}

/// Pointwise viability at a boundary point via the smooth-boundary reduction.
pub fn check_point_viability(
    problem: &ControlProblem,
    domain: &Domain,
    x: &DVector<f64>,
    tols: &ViabilityTols,
) -> Result<ViabilitySample> {
    let n = domain.outward_normal(x)?;
    let hess = domain.hessian_distance(x)?;

    let mut best_feasible: Option<(usize, f64, f64)> = None; // (idx, residual, inward)
    let mut least_residual: Option<(usize, f64, f64)> = None;
    for (idx, a) in problem.control_set().iter().enumerate() {
        let sigma = problem.diffusion(x, a);
        let residual = (sigma.transpose() * &n).norm();
        let b = problem.drift(x, a);
        let inward = -n.dot(&b) + 0.5 * (&sigma * sigma.transpose() * &hess).trace();
        if residual <= tols.tol_sigma {
            let better = match best_feasible {
                Some((_, _, cur)) => inward > cur,
                None => true,
            };
            if better {
                best_feasible = Some((idx, residual, inward));
            }
        }
        let closer = match least_residual {
            Some((_, cur, _)) => residual < cur,
            None => true,
        };
        if closer {
            least_residual = Some((idx, residual, inward));
        }
    }

    let (best_control, tangency_residual, inward_value, pass) = match best_feasible {
        Some((idx, res, inw)) => (idx, res, inw, inw >= -tols.tol_drift),
        None => {
            let (idx, res, inw) = least_residual.ok_or(CoreError::EmptyControlSet)?;
            (idx, res, inw, false)
        }
    };

    Ok(ViabilitySample {
        location: x.clone(),
        best_control,
        tangency_residual,
        inward_value,
        pass,
        strong_pass: None,
    })
}

/// Strong condition (σ_ψ = 0 in full matrix norm, −n·b_ψ ≥ δ_strict) at a
/// boundary point under a feedback map.
pub fn check_strong_condition(
    problem: &ControlProblem,
    domain: &Domain,
    psi: &FeedbackPolicy,
    x: &DVector<f64>,
    tols: &ViabilityTols,
) -> Result<bool> {
    let n = domain.outward_normal(x)?;
    let a = psi.control_at(x);
    let sigma_norm = problem.diffusion(x, a).norm();
    let b = problem.drift(x, a);
    Ok(sigma_norm <= tols.tol_sigma && -n.dot(&b) >= tols.delta_strict)
}

/// Deterministic quasi-uniform boundary samples.
pub fn boundary_samples(domain: &Domain, n_samples: usize) -> Result<Vec<DVector<f64>>> {
    let d = domain.dim();
    let mut out = Vec::with_capacity(n_samples);
    match domain {
        Domain::Ball { center, radius } => {
            let c = DVector::from_vec(center.clone());
            match d {
                1 => {
                    for i in 0..n_samples {
                        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                        out.push(&c + DVector::from_vec(vec![sign * radius]));
                    }
                }
                2 => {
                    for i in 0..n_samples {
                        let theta = 2.0 * PI * i as f64 / n_samples as f64;
                        out.push(
                            &c + DVector::from_vec(vec![
                                radius * theta.cos(),
                                radius * theta.sin(),
                            ]),
                        );
                    }
                }
                3 => {
                    // Fibonacci sphere
                    let golden = PI * (3.0 - 5.0_f64.sqrt());
                    for i in 0..n_samples {
                        let y = 1.0 - 2.0 * (i as f64 + 0.5) / n_samples as f64;
                        let r = (1.0 - y * y).sqrt();
                        let theta = golden * i as f64;
                        out.push(
                            &c + DVector::from_vec(vec![
                                radius * r * theta.cos(),
                                radius * y,
                                radius * r * theta.sin(),
                            ]),
                        );
                    }
                }
                _ => {
                    return Err(CoreError::InvalidParam(format!(
                        "boundary sampling unsupported for ball dimension {d}"
                    )))
                }
            }
        }
        Domain::Box { lower, upper } => {
            // face lattices, excluding a margin near edges
            let tols = ViabilityTols::default();
            let faces = 2 * d;
            let per_face = n_samples.div_ceil(faces).max(1);
            'outer: for axis in 0..d {
                for (fixed, _sign) in [(lower[axis], -1.0), (upper[axis], 1.0)] {
                    if d == 1 {
                        out.push(DVector::from_vec(vec![fixed]));
                        if out.len() >= n_samples {
                            break 'outer;
                        }
                        continue;
                    }
                    // lattice over the remaining axes
                    let free: Vec<usize> = (0..d).filter(|&k| k != axis).collect();
                    let side = (per_face as f64).powf(1.0 / free.len() as f64).ceil() as usize;
                    let side = side.max(1);
                    let mut idx = vec![0usize; free.len()];
                    loop {
                        let mut x = DVector::zeros(d);
                        x[axis] = fixed;
                        for (j, &k) in free.iter().enumerate() {
                            let extent = upper[k] - lower[k];
                            let margin = tols.edge_margin_frac * extent;
                            let t = if side == 1 {
                                0.5
                            } else {
                                idx[j] as f64 / (side - 1) as f64
                            };
                            x[k] = lower[k] + margin + t * (extent - 2.0 * margin);
                        }
                        out.push(x);
                        if out.len() >= n_samples {
                            break 'outer;
                        }
                        // odometer
                        let mut j = 0;
                        loop {
                            idx[j] += 1;
                            if idx[j] < side {
                                break;
                            }
                            idx[j] = 0;
                            j += 1;
                            if j == free.len() {
                                break;
                            }
                        }
                        if j == free.len() {
                            break;
                        }
                    }
                }
            }
        }
        Domain::Smooth { .. } => {
            if d != 2 {
                return Err(CoreError::InvalidParam(
                    "smooth-domain boundary sampling implemented for d=2 only".into(),
                ));
            }
            // rays from the origin, Newton steps onto the zero level
            for i in 0..n_samples {
                let theta = 2.0 * PI * i as f64 / n_samples as f64;
                let dir = DVector::from_vec(vec![theta.cos(), theta.sin()]);
                let mut x = dir.clone();
                for _ in 0..60 {
                    let rho = domain.signed_distance(&x)?;
                    if rho.abs() < 1e-12 {
                        break;
                    }
                    let n = domain.outward_normal(&x)?;
                    x += n * rho;
                }
                out.push(x);
            }
        }
    }
    out.truncate(n_samples.max(1));
    Ok(out)
}

/// Applies the pointwise check over a deterministic boundary sampling;
/// when a feedback map is supplied each sample also records the strong
/// condition under it.
pub fn scan_boundary(
    problem: &ControlProblem,
    domain: &Domain,
    n_samples: usize,
    tols: &ViabilityTols,
    psi: Option<&FeedbackPolicy>,
) -> Result<ViabilityReport> {
    let points = boundary_samples(domain, n_samples.max(1))?;
    let mut samples = Vec::with_capacity(points.len());
    let mut n_pass = 0;
    let mut n_strong = 0;
    let mut worst_tangency: f64 = 0.0;
    let mut worst_inward = f64::INFINITY;
    for x in &points {
        let mut s = check_point_viability(problem, domain, x, tols)?;
        if let Some(psi) = psi {
            let ok = check_strong_condition(problem, domain, psi, x, tols)?;
            s.strong_pass = Some(ok);
            if ok {
                n_strong += 1;
            }
        }
        if s.pass {
            n_pass += 1;
        }
        worst_tangency = worst_tangency.max(s.tangency_residual);
        worst_inward = worst_inward.min(s.inward_value);
        samples.push(s);
    }
    Ok(ViabilityReport {
        samples,
        n_pass,
        n_strong_pass: psi.map(|_| n_strong),
        worst_tangency,
        worst_inward,
    })
}

/// Builds a grid feedback map: boundary nodes take the viability-maximizing
/// control, interior nodes the cost-minimizing one.
pub fn construct_feedback(
    problem: &ControlProblem,
    domain: &Domain,
    grid: &Arc<Grid>,
    tols: &ViabilityTols,
) -> Result<FeedbackMap> {
    let n = grid.n_in_domain();
    let mut control_index = vec![0usize; n];
    let mut provenance = vec![Provenance::InteriorCostArgmin; n];
    let mut failures: Vec<(Vec<f64>, f64)> = Vec::new();

    let interior_argmin = |x: &DVector<f64>| -> usize {
        let mut best = 0;
        let mut best_cost = f64::INFINITY;
        for (idx, a) in problem.control_set().iter().enumerate() {
            let f = problem.running_cost(x, a);
            if f < best_cost {
                best_cost = f;
                best = idx;
            }
        }
        best
    };

    for (ci, &flat) in grid.nodes.iter().enumerate() {
        let x = grid.coord(flat);
        match grid.class_at(flat) {
            NodeClass::Interior => {
                control_index[ci] = interior_argmin(&x);
            }
            NodeClass::Boundary => match check_point_viability(problem, domain, &x, tols) {
                Ok(sample) => {
                    if sample.pass {
                        control_index[ci] = sample.best_control;
                        provenance[ci] = Provenance::BoundaryViable;
                    } else {
                        failures.push((x.iter().copied().collect(), sample.inward_value));
                    }
                }
                Err(CoreError::NormalUndefined { .. }) => {
                    control_index[ci] = interior_argmin(&x);
                    provenance[ci] = Provenance::NormalUndefinedFallback;
                }
                Err(e) => return Err(e),
            },
            NodeClass::Outside => unreachable!("in-domain nodes only"),
        }
    }

    if !failures.is_empty() {
        failures.sort_by(|a, b| a.1.total_cmp(&b.1));
        failures.truncate(5);
        return Err(CoreError::NotViable { worst: failures });
    }

    let policy = Policy::new(grid.clone(), problem.control_set().clone(), control_index)?;
    Ok(FeedbackMap { policy, provenance })
}
