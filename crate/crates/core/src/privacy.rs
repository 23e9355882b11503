//! Gaussian-mechanism calibration for the shared message `x_i − λ g_i`.
//!
//! A Gaussian perturbation of variance `σ² ≥ 2 ln(1.25/δ) S² / ε²` gives
//! (ε, δ)-differential privacy for a query of ℓ₁ sensitivity `S` when
//! `ε, δ ∈ (0, 1)`. The same raw noise `n_i^k` protects three things:
//!
//! | target     | sensitivity of the message | variance requirement on `n_i^k`      |
//! |------------|----------------------------|--------------------------------------|
//! | `sample`   | `ν λ^k / n_i`              | `2 ν² (λ^k)² ln(1.25/δ) / (n_i² ε²)` |
//! | `gradient` | `λ^k`                      | `2 (λ^k)² ln(1.25/δ) / ε²`           |
//! | `variable` | `1`                        | `2 ln(1.25/δ) / ((λ^k)² ε²)`         |
//!
//! For the first two targets the noise enters the message as `λ n` and the
//! `λ` is already folded into the sensitivity. For `variable` the noise on
//! `x_i^k` has variance `(λ^k)² σ²`, hence the `(λ^k)²` in the denominator.
//!
//! All guarantees are per iteration; nothing here composes them over a run.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizer::{NoiseSpec, StepsizeSchedule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrivacyError {
    #[error("epsilon must lie in (0, 1), got {0}")]
    Epsilon(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    Delta(f64),
    #[error("sensitivity inputs must be positive: {0}")]
    Inputs(String),
    #[error("variance must be positive, got {0}")]
    Variance(f64),
    #[error("horizon must be >= 1")]
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyTarget {
    Sample,
    Gradient,
    Variable,
}

impl fmt::Display for PrivacyTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sample => "sample",
            Self::Gradient => "gradient",
            Self::Variable => "variable",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
    target: PrivacyTarget,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64, target: PrivacyTarget) -> Result<Self, PrivacyError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(PrivacyError::Epsilon(epsilon));
        }
        check_delta(delta)?;
        Ok(Self { epsilon, delta, target })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn target(&self) -> PrivacyTarget {
        self.target
    }
}

fn check_delta(delta: f64) -> Result<(), PrivacyError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PrivacyError::Delta(delta));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityInputs {
    /// Gradient Lipschitz constant ν.
    pub nu: f64,
    /// Stepsize λ^k.
    pub lambda_k: f64,
    /// Sample count n_i.
    pub n_i: usize,
}

impl SensitivityInputs {
    pub fn new(nu: f64, lambda_k: f64, n_i: usize) -> Result<Self, PrivacyError> {
        if !(nu > 0.0 && lambda_k > 0.0 && n_i >= 1) || !nu.is_finite() || !lambda_k.is_finite() {
            return Err(PrivacyError::Inputs(format!("nu = {nu}, lambda = {lambda_k}, n_i = {n_i}")));
        }
        Ok(Self { nu, lambda_k, n_i })
    }
}

pub fn sensitivity(target: PrivacyTarget, inputs: &SensitivityInputs) -> f64 {
    match target {
        PrivacyTarget::Sample => inputs.nu * inputs.lambda_k / inputs.n_i as f64,
        PrivacyTarget::Gradient => inputs.lambda_k,
        PrivacyTarget::Variable => 1.0,
    }
}

/// How much of `n_i^k`'s variance lands on the protected quantity.
fn variance_gain(target: PrivacyTarget, inputs: &SensitivityInputs) -> f64 {
    match target {
        PrivacyTarget::Sample | PrivacyTarget::Gradient => 1.0,
        PrivacyTarget::Variable => inputs.lambda_k * inputs.lambda_k,
    }
}

/// Minimal per-coordinate variance of `n_i^k` meeting the budget.
pub fn variance_for_budget(budget: &PrivacyBudget, inputs: &SensitivityInputs) -> f64 {
    let s = sensitivity(budget.target, inputs);
    2.0 * (1.25 / budget.delta).ln() * s * s / (budget.epsilon * budget.epsilon) / variance_gain(budget.target, inputs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonEstimate {
    pub epsilon: f64,
    /// Set when `ε ≥ 1`, outside the range where the Gaussian bound is stated.
    pub out_of_range: bool,
}

/// ε achieved at a fixed noise variance (the algebraic inverse of
/// [`variance_for_budget`]).
pub fn budget_for_variance(
    variance: f64,
    target: PrivacyTarget,
    inputs: &SensitivityInputs,
    delta: f64,
) -> Result<EpsilonEstimate, PrivacyError> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(PrivacyError::Variance(variance));
    }
    check_delta(delta)?;
    let effective = variance * variance_gain(target, inputs);
    let epsilon = sensitivity(target, inputs) * (2.0 * (1.25 / delta).ln() / effective).sqrt();
    Ok(EpsilonEstimate { epsilon, out_of_range: epsilon >= 1.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyRow {
    pub k: usize,
    pub lambda: f64,
    pub eps_sample: EpsilonEstimate,
    pub eps_gradient: EpsilonEstimate,
    pub eps_variable: EpsilonEstimate,
}

/// Per-iteration ε for all three targets at the configured noise variance,
/// for `k = 1..=horizon`.
pub fn per_iteration_report(
    schedule: &StepsizeSchedule,
    noise: &NoiseSpec,
    nu: f64,
    n_i: usize,
    delta: f64,
    horizon: usize,
) -> Result<Vec<PrivacyRow>, PrivacyError> {
    if horizon == 0 {
        return Err(PrivacyError::Horizon);
    }
    (1..=horizon)
        .map(|k| {
            let lambda = schedule.stepsize(k);
            let inputs = SensitivityInputs::new(nu, lambda, n_i)?;
            let eps = |t| budget_for_variance(noise.variance, t, &inputs, delta);
            Ok(PrivacyRow {
                k,
                lambda,
                eps_sample: eps(PrivacyTarget::Sample)?,
                eps_gradient: eps(PrivacyTarget::Gradient)?,
                eps_variable: eps(PrivacyTarget::Variable)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(nu: f64, lambda: f64, n: usize) -> SensitivityInputs {
        SensitivityInputs::new(nu, lambda, n).unwrap()
    }

    /// Generic Gaussian mechanism, written independently of the target table.
    fn gaussian_oracle(s: f64, eps: f64, delta: f64) -> f64 {
        2.0 * (1.25f64 / delta).ln() * s.powi(2) / eps.powi(2)
    }

    #[test]
    fn sensitivities() {
        assert!((sensitivity(PrivacyTarget::Sample, &inputs(1.0, 0.02, 160)) - 0.000125).abs() < 1e-18);
        assert_eq!(sensitivity(PrivacyTarget::Gradient, &inputs(7.0, 0.02, 3)), 0.02);
        assert_eq!(sensitivity(PrivacyTarget::Variable, &inputs(7.0, 0.02, 3)), 1.0);
    }

    #[test]
    fn variance_examples() {
        let sample = PrivacyBudget::new(0.5, 0.05, PrivacyTarget::Sample).unwrap();
        let v = variance_for_budget(&sample, &inputs(1.0, 0.02, 160));
        assert!((v - gaussian_oracle(0.000125, 0.5, 0.05)).abs() < 1e-20);
        assert!((v - 4.0236e-7).abs() < 1e-10);
        let grad = PrivacyBudget::new(0.5, 0.05, PrivacyTarget::Gradient).unwrap();
        let v = variance_for_budget(&grad, &inputs(1.0, 0.02, 160));
        assert!((v - gaussian_oracle(0.02, 0.5, 0.05)).abs() < 1e-16);
        assert!((v - 1.0300e-2).abs() < 1e-5);
        // (λ)² σ² must meet the generic bound with S = 1.
        let var = PrivacyBudget::new(0.5, 0.05, PrivacyTarget::Variable).unwrap();
        let v = variance_for_budget(&var, &inputs(1.0, 0.02, 160));
        assert!((0.02f64.powi(2) * v - gaussian_oracle(1.0, 0.5, 0.05)).abs() < 1e-9);
    }

    #[test]
    fn vanishing_stepsize_needs_no_sample_noise() {
        let b = PrivacyBudget::new(0.5, 0.05, PrivacyTarget::Sample).unwrap();
        assert!(variance_for_budget(&b, &inputs(1.0, 1e-12, 1)) < 1e-20);
    }

    #[test]
    fn inverse_examples() {
        let e = budget_for_variance(1.03e-2, PrivacyTarget::Gradient, &inputs(1.0, 0.02, 1), 0.05).unwrap();
        assert!((e.epsilon - 0.5).abs() < 1e-4);
        assert!(!e.out_of_range);
        let e2 = budget_for_variance(2.06e-2, PrivacyTarget::Gradient, &inputs(1.0, 0.02, 1), 0.05).unwrap();
        assert!((e.epsilon / e2.epsilon - 2f64.sqrt()).abs() < 1e-12);
        let big = budget_for_variance(1e-6, PrivacyTarget::Gradient, &inputs(1.0, 0.02, 1), 0.05).unwrap();
        assert!(big.out_of_range && big.epsilon > 1.0);
    }

    #[test]
    fn invalid_inputs() {
        assert!(PrivacyBudget::new(1.0, 0.1, PrivacyTarget::Sample).is_err());
        assert!(PrivacyBudget::new(0.5, 0.0, PrivacyTarget::Sample).is_err());
        assert!(SensitivityInputs::new(0.0, 0.1, 1).is_err());
        assert!(SensitivityInputs::new(1.0, 0.1, 0).is_err());
        assert!(budget_for_variance(0.0, PrivacyTarget::Sample, &inputs(1.0, 0.1, 1), 0.1).is_err());
    }

    #[test]
    fn report_constant_schedule_constant_rows() {
        let rows =
            per_iteration_report(&StepsizeSchedule::constant(0.01), &NoiseSpec::new(0.5, 0).unwrap(), 1.0, 1, 0.05, 20)
                .unwrap();
        assert_eq!(rows.len(), 20);
        assert!(rows.windows(2).all(|w| w[0].eps_sample == w[1].eps_sample && w[0].eps_variable == w[1].eps_variable));
    }

    #[test]
    fn report_schedule_switch() {
        let rows = per_iteration_report(
            &StepsizeSchedule::estimation_default(),
            &NoiseSpec::new(0.5, 0).unwrap(),
            1.0,
            1,
            0.05,
            3000,
        )
        .unwrap();
        assert!(rows[500].eps_variable.epsilon > rows[499].eps_variable.epsilon);
        for w in rows[500..].windows(2) {
            assert!(w[1].eps_sample.epsilon <= w[0].eps_sample.epsilon);
            assert!(w[1].eps_gradient.epsilon <= w[0].eps_gradient.epsilon);
            assert!(w[1].eps_variable.epsilon >= w[0].eps_variable.epsilon);
        }
        assert!(matches!(
            per_iteration_report(&StepsizeSchedule::constant(0.1), &NoiseSpec::silent(), 1.0, 1, 0.05, 0),
            Err(PrivacyError::Horizon)
        ));
    }
}
