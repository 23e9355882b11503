//! Kurtosis-based ICA on the unit sphere.
//!
//! Observations `y = A z` with orthonormal `A` and i.i.d. Rademacher sources.
//! Agent `i` minimizes `h_i(u) = s · mean_j (ûᵀ y_ij)⁴` with `û = u/‖u‖` and
//! `s = −sign(μ − 3)`, `μ` the fourth moment of the source entries. Writing
//! the objective through `û` makes it scale invariant, so its gradient at a
//! unit vector is the Euclidean gradient projected onto the tangent space.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{refine_known_points_lenient, KnownPoint, Manifold, Problem, ProblemConstants, ProblemError};
use crate::linalg::{norm, sorted_symmetric_eigen};
use crate::rng::{keyed_rng, Domain};

/// Random unit vectors used to estimate ν, ρ and G.
const CONSTANT_SAMPLES: usize = 256;

#[derive(Debug, Clone)]
pub struct IcaProblem {
    mixing: DMatrix<f64>,
    /// One `n_i × d` matrix of observations per agent.
    samples: Vec<DMatrix<f64>>,
    sources: Vec<DMatrix<f64>>,
    sign_factor: f64,
    constants: ProblemConstants,
    known: Vec<KnownPoint>,
}

impl IcaProblem {
    /// Build from explicit data. `sources` are kept for diagnostics only.
    pub fn from_parts(mixing: DMatrix<f64>, sources: Vec<DMatrix<f64>>) -> Result<Self, ProblemError> {
        let d = mixing.nrows();
        if mixing.ncols() != d || d < 2 {
            return Err(ProblemError::InvalidParameter(format!(
                "mixing matrix must be square with d >= 2, got {}x{}",
                d,
                mixing.ncols()
            )));
        }
        let gram = mixing.transpose() * &mixing;
        if crate::linalg::max_abs_diff(&gram, &DMatrix::identity(d, d)) > 1e-10 {
            return Err(ProblemError::InvalidParameter("mixing matrix is not orthonormal".into()));
        }
        if sources.is_empty() || sources.iter().any(|z| z.ncols() != d || z.nrows() == 0) {
            return Err(ProblemError::InvalidParameter("every agent needs at least one length-d sample".into()));
        }
        let count: usize = sources.iter().map(|z| z.len()).sum();
        let mu = sources.iter().flat_map(|z| z.iter()).map(|v| v.powi(4)).sum::<f64>() / count as f64;
        let sign_factor = -(mu - 3.0).signum();
        let samples = sources.iter().map(|z| z * mixing.transpose()).collect();
        let samples_per_agent = sources.iter().map(|z| z.nrows()).collect();
        let mut p = Self {
            mixing,
            samples,
            sources,
            sign_factor,
            constants: ProblemConstants { nu: None, rho: None, gradient_bound: None, samples_per_agent },
            known: Vec::new(),
        };
        p.constants = p.sample_constants();
        let uniform = &p.mixing * DVector::from_element(d, 1.0 / (d as f64).sqrt());
        let mut seeds = vec![("uniform_sign_saddle".to_string(), uniform.data.as_vec().clone())];
        for j in 0..d {
            seeds.push((format!("column_{}", j + 1), p.mixing.column(j).iter().copied().collect()));
        }
        p.known = refine_known_points_lenient(&p, &seeds)?;
        Ok(p)
    }

    pub fn mixing(&self) -> &DMatrix<f64> {
        &self.mixing
    }

    pub fn sign_factor(&self) -> f64 {
        self.sign_factor
    }

    pub fn agent_samples(&self, agent: usize) -> &DMatrix<f64> {
        &self.samples[agent]
    }

    pub fn agent_sources(&self, agent: usize) -> &DMatrix<f64> {
        &self.sources[agent]
    }

    pub fn total_samples(&self) -> usize {
        self.samples.iter().map(|s| s.nrows()).sum()
    }

    /// Empirical fourth moment of the source entries.
    pub fn source_fourth_moment(&self) -> f64 {
        let count: usize = self.sources.iter().map(|z| z.len()).sum();
        self.sources.iter().flat_map(|z| z.iter()).map(|v| v.powi(4)).sum::<f64>() / count as f64
    }

    /// Euclidean gradient and Hessian of `s · mean (uᵀy)⁴` at `u` (no normalization).
    fn raw_derivatives(
        &self,
        agent: usize,
        u: &DVector<f64>,
        want_hessian: bool,
    ) -> (f64, DVector<f64>, Option<DMatrix<f64>>) {
        let y = &self.samples[agent];
        let n = y.nrows() as f64;
        let d = u.len();
        let proj = y * u;
        let mut value = 0.0;
        let mut grad = DVector::zeros(d);
        let mut hess = want_hessian.then(|| DMatrix::zeros(d, d));
        for (j, p) in proj.iter().enumerate() {
            let row = y.row(j).transpose();
            value += p.powi(4);
            grad.axpy(4.0 * p.powi(3), &row, 1.0);
            if let Some(h) = hess.as_mut() {
                h.ger(12.0 * p * p, &row, &row, 1.0);
            }
        }
        let s = self.sign_factor / n;
        (value * s, grad * s, hess.map(|h| h * s))
    }

    fn sample_constants(&self) -> ProblemConstants {
        let d = self.mixing.nrows();
        let mut rng = keyed_rng(0x1ca, Domain::Problem, d as u64, self.total_samples() as u64);
        let points: Vec<Vec<f64>> = (0..CONSTANT_SAMPLES)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let n = norm(&v);
                v.into_iter().map(|x| x / n).collect()
            })
            .collect();
        let spectral = |h: &DMatrix<f64>| sorted_symmetric_eigen(h).0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let (mut nu, mut rho, mut g_bound) = (0.0f64, 0.0f64, 0.0f64);
        for agent in 0..self.agents() {
            let hs: Vec<DMatrix<f64>> = points.iter().map(|p| self.hessian_at(agent, p)).collect();
            for (p, h) in points.iter().zip(&hs) {
                g_bound = g_bound.max(norm(&self.gradient_at(agent, p)));
                nu = nu.max(spectral(h));
            }
            for w in 0..points.len() - 1 {
                let step = crate::linalg::dist(&points[w], &points[w + 1]);
                rho = rho.max(spectral(&(&hs[w] - &hs[w + 1])) / step);
            }
        }
        ProblemConstants {
            nu: Some(nu),
            rho: Some(rho),
            gradient_bound: Some(g_bound),
            samples_per_agent: self.samples.iter().map(|s| s.nrows()).collect(),
        }
    }

    fn gradient_at(&self, agent: usize, theta: &[f64]) -> Vec<f64> {
        let u = DVector::from_column_slice(theta);
        let r = u.norm();
        let uh = &u / r;
        let (_, g, _) = self.raw_derivatives(agent, &uh, false);
        let tangent = &g - &uh * uh.dot(&g);
        (tangent / r).data.into()
    }

    /// Hessian of the scale-invariant objective:
    /// `P H P − (ûᵀg)P − û(Pg)ᵀ − (Pg)ûᵀ`, divided by `‖u‖²`.
    fn hessian_at(&self, agent: usize, theta: &[f64]) -> DMatrix<f64> {
        let u = DVector::from_column_slice(theta);
        let r = u.norm();
        let uh = &u / r;
        let d = u.len();
        let (_, g, h) = self.raw_derivatives(agent, &uh, true);
        let h = h.expect("requested");
        let proj = DMatrix::identity(d, d) - &uh * uh.transpose();
        let pg = &proj * &g;
        let radial = uh.dot(&g);
        let out = &proj * h * &proj - &proj * radial - &uh * pg.transpose() - &pg * uh.transpose();
        out / (r * r)
    }
}

impl Problem for IcaProblem {
    fn name(&self) -> &str {
        "ica"
    }

    fn dim(&self) -> usize {
        self.mixing.nrows()
    }

    fn agents(&self) -> usize {
        self.samples.len()
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
        let u = DVector::from_column_slice(theta);
        let r = u.norm();
        if r == 0.0 {
            return Err(ProblemError::NotUnitNorm(0.0));
        }
        Ok(self.raw_derivatives(agent, &(u / r), false).0)
    }

    fn agent_gradient(&self, agent: usize, theta: &[f64]) -> Result<Vec<f64>, ProblemError> {
        self.check_agent(agent)?;
        self.check_point(theta)?;
        if norm(theta) == 0.0 {
            return Err(ProblemError::NotUnitNorm(0.0));
        }
        Ok(self.gradient_at(agent, theta))
    }

    fn agent_hessian(&self, agent: usize, theta: &[f64]) -> Option<Result<DMatrix<f64>, ProblemError>> {
        if let Err(e) = self.check_agent(agent).and_then(|_| self.check_point(theta)) {
            return Some(Err(e));
        }
        if norm(theta) == 0.0 {
            return Some(Err(ProblemError::NotUnitNorm(0.0)));
        }
        Some(Ok(self.hessian_at(agent, theta)))
    }

    fn manifold(&self) -> Manifold {
        Manifold::UnitSphere
    }

    fn optimization_error(&self, x: &[f64]) -> f64 {
        let n = norm(x);
        let u: Vec<f64> = x.iter().map(|v| v / n).collect();
        ica_reconstruction_error(self, &u).expect("normalized above")
    }
}

/// Draw a random instance: orthonormal `A` from the QR factorization of a
/// Gaussian matrix (signs fixed so `diag(R) > 0`), Rademacher sources, and
/// `samples_per_agent` observations for each of `m` agents.
pub fn make_ica_problem(d: usize, m: usize, samples_per_agent: usize, seed: u64) -> Result<IcaProblem, ProblemError> {
    if d < 2 || m == 0 || samples_per_agent == 0 {
        return Err(ProblemError::InvalidParameter(format!(
            "need d >= 2, m >= 1, samples_per_agent >= 1 (got {d}, {m}, {samples_per_agent})"
        )));
    }
    let mut rng = keyed_rng(seed, Domain::Problem, 0, 0);
    let gauss = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let sources = (0..m)
        .map(|_| DMatrix::from_fn(samples_per_agent, d, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 }))
        .collect();
    IcaProblem::from_parts(q, sources)
}

/// Distance from `u` to the nearest column of `A` up to sign.
pub fn ica_reconstruction_error(p: &IcaProblem, u: &[f64]) -> Result<f64, ProblemError> {
    p.check_point(u)?;
    let n = norm(u);
    if (n - 1.0).abs() > 1e-8 {
        return Err(ProblemError::NotUnitNorm(n));
    }
    let mut best = f64::INFINITY;
    for col in p.mixing.column_iter() {
        let minus: f64 = u.iter().zip(col.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        let plus: f64 = u.iter().zip(col.iter()).map(|(a, b)| (a + b) * (a + b)).sum();
        best = best.min(minus.sqrt()).min(plus.sqrt());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{aggregated_gradient, StationaryKind};

    #[test]
    fn sizes_and_sources() {
        let p = make_ica_problem(10, 5, 160, 3).unwrap();
        assert_eq!(p.total_samples(), 800);
        for i in 0..5 {
            assert!(p.agent_sources(i).iter().all(|v| *v == 1.0 || *v == -1.0));
        }
        assert_eq!(p.source_fourth_moment(), 1.0);
        assert_eq!(p.sign_factor(), 1.0);
        let a = p.mixing();
        assert!(crate::linalg::max_abs_diff(&(a.transpose() * a), &DMatrix::identity(10, 10)) < 1e-10);
    }

    #[test]
    fn reconstruction_error_cases() {
        let p = make_ica_problem(4, 2, 20, 11).unwrap();
        let a1: Vec<f64> = p.mixing().column(0).iter().copied().collect();
        assert!(ica_reconstruction_error(&p, &a1).unwrap() < 1e-15);
        let neg: Vec<f64> = a1.iter().map(|v| -v).collect();
        assert!(ica_reconstruction_error(&p, &neg).unwrap() < 1e-15);
        assert!(matches!(ica_reconstruction_error(&p, &[1.0, 1.0, 0.0, 0.0]), Err(ProblemError::NotUnitNorm(_))));
    }

    #[test]
    fn reconstruction_error_uniform_direction_identity_mixing() {
        let sources = vec![DMatrix::from_fn(8, 4, |i, j| if (i + j) % 2 == 0 { 1.0 } else { -1.0 })];
        let p = IcaProblem::from_parts(DMatrix::identity(4, 4), sources);
        // Refinement may fail on this degenerate sample; only the metric matters.
        if let Ok(p) = p {
            let err = ica_reconstruction_error(&p, &[0.5, 0.5, 0.5, 0.5]).unwrap();
            assert!((err - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn objective_sign_invariant() {
        let p = make_ica_problem(4, 3, 40, 5).unwrap();
        let u = [0.3, -0.5, 0.1, 0.8];
        let neg = [-0.3, 0.5, -0.1, -0.8];
        for i in 0..3 {
            assert_eq!(p.agent_objective(i, &u).unwrap(), p.agent_objective(i, &neg).unwrap());
        }
    }

    #[test]
    fn gradient_is_tangent_at_unit_vectors() {
        let p = make_ica_problem(4, 3, 40, 5).unwrap();
        let u = [0.5, 0.5, -0.5, 0.5];
        let g = p.agent_gradient(1, &u).unwrap();
        let radial: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!(radial.abs() < 1e-12);
    }

    #[test]
    fn known_points_refined() {
        let p = make_ica_problem(4, 5, 160, 9).unwrap();
        let saddle = p.saddle_point().unwrap();
        assert_eq!(saddle.label, "uniform_sign_saddle");
        assert!(norm(&aggregated_gradient(&p, &saddle.refined).unwrap()) < 1e-10);
        assert!(p.known_points().iter().filter(|k| k.kind == StationaryKind::Minimum).count() >= 1);
    }
}
