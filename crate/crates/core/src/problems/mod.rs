//! Objective interface and benchmark problems.
//!
//! Every problem is a sum of per-agent objectives `F = (1/m) Σ f_i`. The free
//! functions in this module (aggregated gradient/Hessian, stationary-point
//! classification, Newton refinement) work against the [`Problem`] trait.

mod estimation;
mod ica;
mod quadratic;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{norm, orthogonal_complement, sorted_symmetric_eigen};

pub use estimation::{make_paper_estimation_problem, BoxRegion, EstimationProblem};
pub use ica::{ica_reconstruction_error, make_ica_problem, IcaProblem};
pub use quadratic::CustomQuadratic;

/// Central-difference step used by the Hessian fallback.
pub const FD_HESSIAN_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("agent {agent} out of range for {agents} agents")]
    AgentOutOfRange { agent: usize, agents: usize },
    #[error("SingularPoint: analytic Hessian is undefined at theta = 0")]
    SingularPoint,
    #[error("NotUnitNorm: ‖u‖ = {0}")]
    NotUnitNorm(f64),
    #[error("invalid problem parameter: {0}")]
    InvalidParameter(String),
    #[error("Newton refinement from {start:?} did not converge (‖∇F‖ = {residual:e})")]
    RefinementFailed { start: Vec<f64>, residual: f64 },
}

/// Geometry of the decision variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Manifold {
    Euclidean,
    /// Iterates are renormalized after every step; Hessians are read on the
    /// tangent space.
    UnitSphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryKind {
    Minimum,
    Maximum,
    StrictSaddle,
    Degenerate,
    NotStationary,
}

impl fmt::Display for StationaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Minimum => "minimum",
            Self::Maximum => "maximum",
            Self::StrictSaddle => "strict_saddle",
            Self::Degenerate => "degenerate",
            Self::NotStationary => "not_stationary",
        })
    }
}

/// Smoothness constants. `None` means the constant does not exist or was not
/// computed for this problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemConstants {
    /// Gradient Lipschitz constant ν.
    pub nu: Option<f64>,
    /// Hessian Lipschitz constant ρ.
    pub rho: Option<f64>,
    /// Gradient norm bound G.
    pub gradient_bound: Option<f64>,
    /// Per-agent sample counts n_i.
    pub samples_per_agent: Vec<usize>,
}

/// A stationary point known in advance, both as quoted and after Newton
/// refinement on the aggregated gradient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnownPoint {
    pub label: String,
    pub quoted: Vec<f64>,
    pub refined: Vec<f64>,
    pub kind: StationaryKind,
}

pub trait Problem: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn agents(&self) -> usize;
    fn constants(&self) -> &ProblemConstants;
    fn known_points(&self) -> &[KnownPoint];

    fn agent_objective(&self, agent: usize, theta: &[f64]) -> Result<f64, ProblemError>;
    fn agent_gradient(&self, agent: usize, theta: &[f64]) -> Result<Vec<f64>, ProblemError>;

    /// Analytic per-agent Hessian, when one exists.
    fn agent_hessian(&self, _agent: usize, _theta: &[f64]) -> Option<Result<DMatrix<f64>, ProblemError>> {
        None
    }

    fn manifold(&self) -> Manifold {
        Manifold::Euclidean
    }

    /// Axis-aligned region used for random initialization.
    fn region(&self) -> Option<&BoxRegion> {
        None
    }

    /// Distance-like error of an iterate against the problem's target.
    fn optimization_error(&self, x: &[f64]) -> f64;

    /// Map an iterate back onto the feasible set.
    fn retract(&self, x: &mut [f64]) {
        if self.manifold() == Manifold::UnitSphere {
            let n = norm(x);
            if n > 0.0 {
                x.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    fn check_point(&self, theta: &[f64]) -> Result<(), ProblemError> {
        if theta.len() != self.dim() {
            return Err(ProblemError::DimensionMismatch { expected: self.dim(), got: theta.len() });
        }
        Ok(())
    }

    fn check_agent(&self, agent: usize) -> Result<(), ProblemError> {
        if agent >= self.agents() {
            return Err(ProblemError::AgentOutOfRange { agent, agents: self.agents() });
        }
        Ok(())
    }

    /// First known point classified as a strict saddle or maximum, refined.
    fn saddle_point(&self) -> Option<&KnownPoint> {
        self.known_points().iter().find(|p| matches!(p.kind, StationaryKind::StrictSaddle | StationaryKind::Maximum))
    }

    /// First known minimum, refined.
    fn minimum_point(&self) -> Option<&KnownPoint> {
        self.known_points().iter().find(|p| p.kind == StationaryKind::Minimum)
    }
}

/// `∇f_i(θ)`, validated.
pub fn agent_gradient(p: &dyn Problem, agent: usize, theta: &[f64]) -> Result<Vec<f64>, ProblemError> {
    p.check_agent(agent)?;
    p.check_point(theta)?;
    p.agent_gradient(agent, theta)
}

pub fn aggregated_objective(p: &dyn Problem, theta: &[f64]) -> Result<f64, ProblemError> {
    let mut total = 0.0;
    for i in 0..p.agents() {
        total += p.agent_objective(i, theta)?;
    }
    Ok(total / p.agents() as f64)
}

/// `∇F(θ) = (1/m) Σ ∇f_i(θ)`.
pub fn aggregated_gradient(p: &dyn Problem, theta: &[f64]) -> Result<Vec<f64>, ProblemError> {
    p.check_point(theta)?;
    let mut total = vec![0.0; p.dim()];
    for i in 0..p.agents() {
        for (t, g) in total.iter_mut().zip(p.agent_gradient(i, theta)?) {
            *t += g;
        }
    }
    let m = p.agents() as f64;
    Ok(total.into_iter().map(|v| v / m).collect())
}

/// Central-difference gradient of `f_i`.
pub fn finite_difference_gradient(
    p: &dyn Problem,
    agent: usize,
    theta: &[f64],
    step: f64,
) -> Result<Vec<f64>, ProblemError> {
    p.check_agent(agent)?;
    p.check_point(theta)?;
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            probe[j] = theta[j] + step;
            let plus = p.agent_objective(agent, &probe)?;
            probe[j] = theta[j] - step;
            let minus = p.agent_objective(agent, &probe)?;
            probe[j] = theta[j];
            Ok((plus - minus) / (2.0 * step))
        })
        .collect()
}

/// Symmetrized central-difference Jacobian of the aggregated gradient.
pub fn finite_difference_hessian(p: &dyn Problem, theta: &[f64], step: f64) -> Result<DMatrix<f64>, ProblemError> {
    p.check_point(theta)?;
    let d = p.dim();
    let mut h = DMatrix::zeros(d, d);
    let mut probe = theta.to_vec();
    for j in 0..d {
        probe[j] = theta[j] + step;
        let plus = aggregated_gradient(p, &probe)?;
        probe[j] = theta[j] - step;
        let minus = aggregated_gradient(p, &probe)?;
        probe[j] = theta[j];
        for i in 0..d {
            h[(i, j)] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// `∇²F(θ)`: mean of analytic per-agent Hessians, or a finite-difference
/// fallback when the problem has none.
pub fn aggregated_hessian(p: &dyn Problem, theta: &[f64]) -> Result<DMatrix<f64>, ProblemError> {
    p.check_point(theta)?;
    let d = p.dim();
    let mut total = DMatrix::zeros(d, d);
    for i in 0..p.agents() {
        match p.agent_hessian(i, theta) {
            Some(h) => total += h?,
            None => return finite_difference_hessian(p, theta, FD_HESSIAN_STEP),
        }
    }
    Ok(total / p.agents() as f64)
}

/// Eigenvalues of the aggregated Hessian on the feasible directions
/// (the tangent space for sphere problems), ascending, with eigenvectors in
/// ambient coordinates.
pub fn feasible_hessian_eigen(p: &dyn Problem, theta: &[f64]) -> Result<(Vec<f64>, Vec<DVector<f64>>), ProblemError> {
    let h = aggregated_hessian(p, theta)?;
    match p.manifold() {
        Manifold::Euclidean => Ok(sorted_symmetric_eigen(&h)),
        Manifold::UnitSphere => {
            let u = DVector::from_column_slice(theta).normalize();
            let basis = orthogonal_complement(&u);
            let reduced = basis.transpose() * &h * &basis;
            let (values, vectors) = sorted_symmetric_eigen(&reduced);
            let ambient = vectors.into_iter().map(|v| &basis * v).collect();
            Ok((values, ambient))
        }
    }
}

/// Taxonomy of a candidate point by gradient size and Hessian eigenvalue signs.
pub fn classify_stationary_point(
    p: &dyn Problem,
    theta: &[f64],
    grad_tol: f64,
    eig_tol: f64,
) -> Result<StationaryKind, ProblemError> {
    if !(grad_tol > 0.0 && eig_tol > 0.0) {
        return Err(ProblemError::InvalidParameter("tolerances must be positive".into()));
    }
    if norm(&aggregated_gradient(p, theta)?) > grad_tol {
        return Ok(StationaryKind::NotStationary);
    }
    let (values, _) = feasible_hessian_eigen(p, theta)?;
    let positive = values.iter().filter(|&&v| v > eig_tol).count();
    let negative = values.iter().filter(|&&v| v < -eig_tol).count();
    Ok(if positive == values.len() {
        StationaryKind::Minimum
    } else if negative == values.len() {
        StationaryKind::Maximum
    } else if positive > 0 && negative > 0 {
        StationaryKind::StrictSaddle
    } else {
        StationaryKind::Degenerate
    })
}

/// Newton iteration on `∇F = 0` starting from `start`.
///
/// For sphere problems the step is solved on the tangent space and the
/// iterate renormalized.
pub fn refine_stationary_point(p: &dyn Problem, start: &[f64], tol: f64) -> Result<Vec<f64>, ProblemError> {
    let mut x = start.to_vec();
    p.retract(&mut x);
    let mut residual = f64::INFINITY;
    for _ in 0..100 {
        let g = aggregated_gradient(p, &x)?;
        residual = norm(&g);
        if residual <= tol {
            return Ok(x);
        }
        let mut h = aggregated_hessian(p, &x)?;
        if p.manifold() == Manifold::UnitSphere {
            let u = DVector::from_column_slice(&x);
            h += &u * u.transpose();
        }
        let Some(step) = h.lu().solve(&DVector::from_vec(g)) else {
            break;
        };
        for (xi, si) in x.iter_mut().zip(step.iter()) {
            *xi -= si;
        }
        p.retract(&mut x);
    }
    if residual <= tol * 100.0 {
        return Ok(x);
    }
    Err(ProblemError::RefinementFailed { start: start.to_vec(), residual })
}

/// Refine each seed and classify the result.
pub(crate) fn refine_known_points(
    p: &dyn Problem,
    seeds: &[(String, Vec<f64>)],
) -> Result<Vec<KnownPoint>, ProblemError> {
    seeds.iter().map(|(label, quoted)| refine_one(p, label, quoted)).collect()
}

/// Like [`refine_known_points`], but a seed whose refinement fails is kept
/// as quoted and classified there.
pub(crate) fn refine_known_points_lenient(
    p: &dyn Problem,
    seeds: &[(String, Vec<f64>)],
) -> Result<Vec<KnownPoint>, ProblemError> {
    seeds
        .iter()
        .map(|(label, quoted)| match refine_one(p, label, quoted) {
            Err(ProblemError::RefinementFailed { .. }) => {
                let mut x = quoted.clone();
                p.retract(&mut x);
                let kind = classify_stationary_point(p, &x, 1e-8, 1e-6)?;
                Ok(KnownPoint { label: label.clone(), quoted: quoted.clone(), refined: x, kind })
            }
            other => other,
        })
        .collect()
}

fn refine_one(p: &dyn Problem, label: &str, quoted: &[f64]) -> Result<KnownPoint, ProblemError> {
    let refined = refine_stationary_point(p, quoted, 1e-12)?;
    let kind = classify_stationary_point(p, &refined, 1e-8, 1e-6)?;
    Ok(KnownPoint { label: label.to_string(), quoted: quoted.to_vec(), refined, kind })
}
