use nalgebra::DMatrix;

use super::{refine_known_points, KnownPoint, Problem, ProblemConstants, ProblemError};
use crate::linalg::dist;

/// `f_i(x) = Σ_l a_l (x_l − c_il)²`; one center per agent.
///
/// The aggregate is stationary at the mean center, whose type is fixed by the
/// signs of `a`. Used as a synthetic oracle problem.
#[derive(Debug, Clone)]
pub struct CustomQuadratic {
    diag: Vec<f64>,
    centers: Vec<Vec<f64>>,
    constants: ProblemConstants,
    known: Vec<KnownPoint>,
}

impl CustomQuadratic {
    pub fn new(diag: Vec<f64>, centers: Vec<Vec<f64>>) -> Result<Self, ProblemError> {
        let d = diag.len();
        if d == 0 || centers.is_empty() {
            return Err(ProblemError::InvalidParameter("need d >= 1 and at least one agent".into()));
        }
        if let Some(c) = centers.iter().find(|c| c.len() != d) {
            return Err(ProblemError::DimensionMismatch { expected: d, got: c.len() });
        }
        let m = centers.len();
        let nu = diag.iter().fold(0.0f64, |a, v| a.max(2.0 * v.abs()));
        let mut p = Self {
            diag,
            centers,
            constants: ProblemConstants {
                nu: (nu > 0.0).then_some(nu),
                rho: None,
                gradient_bound: None,
                samples_per_agent: vec![1; m],
            },
            known: Vec::new(),
        };
        let mean: Vec<f64> = (0..d).map(|l| p.centers.iter().map(|c| c[l]).sum::<f64>() / m as f64).collect();
        if p.diag.iter().all(|a| *a != 0.0) {
            p.known = refine_known_points(&p, &[("center".to_string(), mean)])?;
        } else {
            p.known = vec![KnownPoint {
                label: "center".into(),
                quoted: mean.clone(),
                refined: mean,
                kind: super::StationaryKind::Degenerate,
            }];
        }
        Ok(p)
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }
}

impl Problem for CustomQuadratic {
    fn name(&self) -> &str {
        "custom_quadratic"
    }

    fn dim(&self) -> usize {
        self.diag.len()
    }

    fn agents(&self) -> usize {
        self.centers.len()
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn known_points(&self) -> &[KnownPoint] {
        &self.known
    }

    fn agent_objective(&self, agent: usize, theta: &[f64]) -> Result<f64, ProblemError> {
        self.check_agent(agent)?;
        self.check_point(theta)?;
        Ok(self.diag.iter().zip(theta).zip(&self.centers[agent]).map(|((a, x), c)| a * (x - c) * (x - c)).sum())
    }

    fn agent_gradient(&self, agent: usize, theta: &[f64]) -> Result<Vec<f64>, ProblemError> {
        self.check_agent(agent)?;
        self.check_point(theta)?;
        Ok(self.diag.iter().zip(theta).zip(&self.centers[agent]).map(|((a, x), c)| 2.0 * a * (x - c)).collect())
    }

    fn agent_hessian(&self, agent: usize, theta: &[f64]) -> Option<Result<DMatrix<f64>, ProblemError>> {
        if let Err(e) = self.check_agent(agent).and_then(|_| self.check_point(theta)) {
            return Some(Err(e));
        }
        let d = self.dim();
        Some(Ok(DMatrix::from_fn(d, d, |i, j| if i == j { 2.0 * self.diag[i] } else { 0.0 })))
    }

    fn optimization_error(&self, x: &[f64]) -> f64 {
        dist(x, &self.known[0].refined)
    }
}
