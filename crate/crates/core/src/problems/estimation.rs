//! Decentralized estimation with a nonconvex cubic regularizer.
//!
//! Agent `i` holds `f_i(θ) = ‖Y_i − Mθ‖² + κ‖θ‖³` on an axis-aligned box.
//! Outside the box the objective is continued by a C¹ blend: with `θ_c` the
//! box projection, `δ = θ − θ_c` and `r = ‖δ‖`,
//!
//! ```text
//! f_i(θ) = f_i(θ_c) + s(r) ∇f_i(θ_c)ᵀδ + (1 − s(r)) c r
//! ```
//!
//! where `s` is a smoothstep falling from 1 to 0 over `ramp_radius` and `c` is
//! the largest gradient norm found on the box boundary. Beyond the ramp the
//! objective grows linearly with distance from the box.

use nalgebra::{DMatrix, DVector};

use super::{refine_known_points, KnownPoint, Problem, ProblemConstants, ProblemError};
use crate::linalg::{dist, sorted_symmetric_eigen};

/// Per-axis sample count for constant estimation over the region.
const CONSTANT_GRID: usize = 48;
/// Boundary samples per face axis when estimating the outer slope.
const BOUNDARY_SAMPLES: usize = 2001;

#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ProblemError> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(ProblemError::InvalidParameter(format!("empty region lo = {lo:?}, hi = {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| *l <= *v && *v <= *h)
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.lo).zip(&self.hi).map(|((v, l), h)| v.clamp(*l, *h)).collect()
    }
}

/// Smoothstep falling from 1 at `r = 0` to 0 at `r = radius`, and its derivative.
fn ramp(r: f64, radius: f64) -> (f64, f64) {
    if r >= radius {
        return (0.0, 0.0);
    }
    let t = r / radius;
    (1.0 - 3.0 * t * t + 2.0 * t * t * t, (-6.0 * t + 6.0 * t * t) / radius)
}

#[derive(Debug, Clone)]
pub struct EstimationProblem {
    measurement: DMatrix<f64>,
    observations: Vec<DVector<f64>>,
    kappa: f64,
    region: BoxRegion,
    ramp_radius: f64,
    slope: f64,
    constants: ProblemConstants,
    known: Vec<KnownPoint>,
    target: Vec<f64>,
}

impl EstimationProblem {
    /// Build an instance and refine the seeded stationary points.
    ///
    /// The optimization-error target is the first refined minimum among the
    /// seeds, or the first seed if none is a minimum.
    pub fn new(
        measurement: DMatrix<f64>,
        observations: Vec<DVector<f64>>,
        kappa: f64,
        region: BoxRegion,
        ramp_radius: f64,
        seeds: &[(String, Vec<f64>)],
    ) -> Result<Self, ProblemError> {
        let d = measurement.ncols();
        if observations.is_empty() {
            return Err(ProblemError::InvalidParameter("at least one agent required".into()));
        }
        if let Some(y) = observations.iter().find(|y| y.len() != measurement.nrows()) {
            return Err(ProblemError::DimensionMismatch { expected: measurement.nrows(), got: y.len() });
        }
        if region.dim() != d {
            return Err(ProblemError::DimensionMismatch { expected: d, got: region.dim() });
        }
        if !(ramp_radius > 0.0) {
            return Err(ProblemError::InvalidParameter("ramp_radius must be positive".into()));
        }
        let m = observations.len();
        let mut p = Self {
            measurement,
            observations,
            kappa,
            region,
            ramp_radius,
            slope: 0.0,
            constants: ProblemConstants { nu: None, rho: None, gradient_bound: None, samples_per_agent: vec![1; m] },
            known: Vec::new(),
            target: vec![0.0; d],
        };
        p.slope = p.boundary_gradient_bound();
        p.constants = p.sample_constants();
        p.known = refine_known_points(&p, seeds)?;
        p.target = p
            .known
            .iter()
            .find(|k| k.kind == super::StationaryKind::Minimum)
            .or(p.known.first())
            .map(|k| k.refined.clone())
            .unwrap_or_else(|| vec![0.0; d]);
        Ok(p)
    }

    pub fn measurement(&self) -> &DMatrix<f64> {
        &self.measurement
    }

    pub fn observation(&self, agent: usize) -> &DVector<f64> {
        &self.observations[agent]
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn ramp_radius(&self) -> f64 {
        self.ramp_radius
    }

    /// Slope `c` of the linear growth outside the region.
    pub fn outer_slope(&self) -> f64 {
        self.slope
    }

    /// Same problem with agent `agent`'s observation replaced; constants and
    /// known points are carried over unchanged.
    pub fn with_observation(&self, agent: usize, y: Vec<f64>) -> Result<Self, ProblemError> {
        self.check_agent(agent)?;
        if y.len() != self.measurement.nrows() {
            return Err(ProblemError::DimensionMismatch { expected: self.measurement.nrows(), got: y.len() });
        }
        let mut p = self.clone();
        p.observations[agent] = DVector::from_vec(y);
        Ok(p)
    }

    fn inner_objective(&self, agent: usize, theta: &DVector<f64>) -> f64 {
        let r = &self.observations[agent] - &self.measurement * theta;
        r.norm_squared() + self.kappa * theta.norm().powi(3)
    }

    /// `−2MᵀY_i + 2MᵀMθ + 3κ‖θ‖θ`
    fn inner_gradient(&self, agent: usize, theta: &DVector<f64>) -> DVector<f64> {
        let mt = self.measurement.transpose();
        let residual = &self.measurement * theta - &self.observations[agent];
        mt * residual * 2.0 + theta * (3.0 * self.kappa * theta.norm())
    }

    /// `2MᵀM + 3κ(‖θ‖I + θθᵀ/‖θ‖)`, obtained by differentiating the gradient.
    fn inner_hessian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>, ProblemError> {
        let n = theta.norm();
        if n == 0.0 {
            return Err(ProblemError::SingularPoint);
        }
        let d = theta.len();
        let mtm = self.measurement.transpose() * &self.measurement;
        Ok(mtm * 2.0 + (DMatrix::identity(d, d) * n + theta * theta.transpose() / n) * (3.0 * self.kappa))
    }

    fn extended(&self, agent: usize, theta: &[f64]) -> (f64, DVector<f64>) {
        let th = DVector::from_column_slice(theta);
        if self.region.contains(theta) {
            return (self.inner_objective(agent, &th), self.inner_gradient(agent, &th));
        }
        let tc = DVector::from_vec(self.region.project(theta));
        let delta = &th - &tc;
        let r = delta.norm();
        let free: Vec<bool> = theta.iter().zip(tc.iter()).map(|(a, b)| a == b).collect();
        let fc = self.inner_objective(agent, &tc);
        let gc = self.inner_gradient(agent, &tc);
        let lin = gc.dot(&delta);
        let (s, ds) = ramp(r, self.ramp_radius);
        let c = self.slope;
        let value = fc + s * lin + (1.0 - s) * c * r;

        // d/dθ of g(θ_c)ᵀδ: H(θ_c) restricted to free coordinates, applied to δ,
        // plus g(θ_c) on clipped coordinates.
        let hc = self.inner_hessian(&tc).expect("box boundary excludes the origin");
        let h_delta = hc * &delta;
        let u = &delta / r;
        let mut grad = DVector::zeros(theta.len());
        for j in 0..theta.len() {
            let dlin = if free[j] { h_delta[j] } else { gc[j] };
            let base = if free[j] { gc[j] } else { 0.0 };
            grad[j] = base + s * dlin + ds * u[j] * lin + (1.0 - s) * c * u[j] - ds * c * r * u[j];
        }
        (value, grad)
    }

    /// Largest `‖∇f_i‖` over a boundary grid and all agents.
    fn boundary_gradient_bound(&self) -> f64 {
        let d = self.region.dim();
        let per_axis = if d <= 1 { 1 } else { ((BOUNDARY_SAMPLES as f64).powf(1.0 / (d - 1) as f64) as usize).max(2) };
        let mut best: f64 = 0.0;
        for axis in 0..d {
            for side in [self.region.lo[axis], self.region.hi[axis]] {
                for point in face_grid(&self.region, axis, side, per_axis) {
                    let th = DVector::from_vec(point);
                    for i in 0..self.agents() {
                        best = best.max(self.inner_gradient(i, &th).norm());
                    }
                }
            }
        }
        best
    }

    /// ν, ρ and G by sampling a cell-centred grid over the region.
    fn sample_constants(&self) -> ProblemConstants {
        let d = self.region.dim();
        let per_axis = ((CONSTANT_GRID.pow(2) as f64).powf(1.0 / d as f64) as usize).max(2);
        let points = cell_centres(&self.region, per_axis);
        let mut nu: f64 = 0.0;
        let mut g_bound: f64 = 0.0;
        let mut rho: f64 = 0.0;
        let spectral = |h: &DMatrix<f64>| sorted_symmetric_eigen(h).0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let hessians: Vec<Option<DMatrix<f64>>> =
            points.iter().map(|p| self.inner_hessian(&DVector::from_column_slice(p)).ok()).collect();
        for (p, h) in points.iter().zip(&hessians) {
            let th = DVector::from_column_slice(p);
            for i in 0..self.agents() {
                g_bound = g_bound.max(self.inner_gradient(i, &th).norm());
            }
            if let Some(h) = h {
                nu = nu.max(spectral(h));
            }
        }
        // Hessians differ across agents only by constants, so one agent suffices for ρ.
        for (a, (pa, ha)) in points.iter().zip(&hessians).enumerate() {
            for (pb, hb) in points.iter().zip(&hessians).skip(a + 1).take(per_axis + 1) {
                if let (Some(ha), Some(hb)) = (ha, hb) {
                    let step = dist(pa, pb);
                    if step > 0.0 {
                        rho = rho.max(spectral(&(ha - hb)) / step);
                    }
                }
            }
        }
        ProblemConstants {
            nu: Some(nu),
            rho: Some(rho),
            gradient_bound: Some(g_bound),
            samples_per_agent: vec![1; self.agents()],
        }
    }
}

fn cell_centres(region: &BoxRegion, per_axis: usize) -> Vec<Vec<f64>> {
    let d = region.dim();
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|axis| {
                    let k = idx % per_axis;
                    idx /= per_axis;
                    let w = (region.hi[axis] - region.lo[axis]) / per_axis as f64;
                    region.lo[axis] + (k as f64 + 0.5) * w
                })
                .collect()
        })
        .collect()
}

fn face_grid(region: &BoxRegion, axis: usize, value: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let d = region.dim();
    let others: Vec<usize> = (0..d).filter(|&a| a != axis).collect();
    let total = per_axis.pow(others.len() as u32);
    (0..total)
        .map(|mut idx| {
            let mut p = vec![value; d];
            for &a in &others {
                let k = idx % per_axis;
                idx /= per_axis;
                p[a] = region.lo[a] + (region.hi[a] - region.lo[a]) * k as f64 / (per_axis - 1) as f64;
            }
            p
        })
        .collect()
}

impl Problem for EstimationProblem {
    fn name(&self) -> &str {
        "estimation"
    }

    fn dim(&self) -> usize {
        self.measurement.ncols()
    }

    fn agents(&self) -> usize {
        self.observations.len()
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
        Ok(self.extended(agent, theta).0)
    }

    fn agent_gradient(&self, agent: usize, theta: &[f64]) -> Result<Vec<f64>, ProblemError> {
        self.check_agent(agent)?;
        self.check_point(theta)?;
        Ok(self.extended(agent, theta).1.data.into())
    }

    /// Analytic inside the region; the blended exterior has no closed form
    /// here and falls back to differences of the gradient.
    fn agent_hessian(&self, agent: usize, theta: &[f64]) -> Option<Result<DMatrix<f64>, ProblemError>> {
        if let Err(e) = self.check_agent(agent).and_then(|_| self.check_point(theta)) {
            return Some(Err(e));
        }
        if self.region.contains(theta) {
            return Some(self.inner_hessian(&DVector::from_column_slice(theta)));
        }
        let h = super::FD_HESSIAN_STEP;
        let d = theta.len();
        let mut out = DMatrix::zeros(d, d);
        let mut probe = theta.to_vec();
        for j in 0..d {
            probe[j] = theta[j] + h;
            let plus = self.extended(agent, &probe).1;
            probe[j] = theta[j] - h;
            let minus = self.extended(agent, &probe).1;
            probe[j] = theta[j];
            out.set_column(j, &((plus - minus) / (2.0 * h)));
        }
        Some(Ok((&out + out.transpose()) * 0.5))
    }

    fn region(&self) -> Option<&BoxRegion> {
        Some(&self.region)
    }

    fn optimization_error(&self, x: &[f64]) -> f64 {
        dist(x, &self.target)
    }
}

/// The five-agent, two-dimensional benchmark: `M = [[1,0],[0,2],[0,0]]`,
/// `Y_i = i·(1/3, 2/3, 0)`, `κ = −0.1`, region `[−8,4]×[−3,3]`.
pub fn make_paper_estimation_problem() -> EstimationProblem {
    let measurement = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
    let observations = (1..=5).map(|i| DVector::from_vec(vec![i as f64 / 3.0, 2.0 * i as f64 / 3.0, 0.0])).collect();
    let region = BoxRegion::new(vec![-8.0, -3.0], vec![4.0, 3.0]).expect("static region");
    let seeds = [("minimum".to_string(), vec![1.3478, 1.0690]), ("saddle".to_string(), vec![-7.4336, 1.3959])];
    EstimationProblem::new(measurement, observations, -0.1, region, 0.5, &seeds).expect("static problem data")
}
