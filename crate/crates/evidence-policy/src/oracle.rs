//! Closed-form oracle quantities for finite-cell populations: the asymptotic
//! t-criterion, test power, the optimal relaxed policy, the value-weighted
//! constrained objective, and reference-assignment relabeling.
//!
//! Specs carry raw per-cell effects τ; the t operation multiplies by √N, so
//! effects here live on the local-to-zero scale μ = √N·τ. Callers must not
//! pre-scale.

use serde::{Deserialize, Serialize};

use crate::dataset::TrialDataset;
use crate::policy::Policy;
use crate::stats;
use crate::{Error, Result};

/// One population cell: probability mass, treatment effect, and conditional
/// variance of the pseudo-outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleCell {
    pub mass: f64,
    pub tau: f64,
    pub sigma_sq: f64,
}

/// Finite-cell population description for oracle computations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub cells: Vec<OracleCell>,
    /// Hold-out sample size N.
    pub holdout_size: f64,
    /// One-sided test level α.
    pub alpha: f64,
}

impl OracleSpec {
    pub fn new(cells: Vec<OracleCell>, holdout_size: f64, alpha: f64) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidConfig("spec needs at least one cell".into()));
        }
        let mass: f64 = cells.iter().map(|c| c.mass).sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "cell masses must sum to 1, got {mass}"
            )));
        }
        if cells.iter().any(|c| c.sigma_sq <= 0.0 || c.mass < 0.0) {
            return Err(Error::InvalidConfig(
                "cells need sigma_sq > 0 and mass >= 0".into(),
            ));
        }
        let alpha_ok = alpha > 0.0 && alpha < 1.0;
        if !(holdout_size.is_finite() && holdout_size > 0.0 && alpha_ok) {
            return Err(Error::InvalidConfig(
                "need holdout_size > 0 and alpha in (0,1)".into(),
            ));
        }
        Ok(Self {
            cells,
            holdout_size,
            alpha,
        })
    }

    fn check_assignment(&self, assignment: &[f64]) -> Result<()> {
        if assignment.len() != self.cells.len() {
            return Err(Error::InvalidConfig(format!(
                "assignment length {} does not match {} cells",
                assignment.len(),
                self.cells.len()
            )));
        }
        if assignment.iter().any(|&a| !(0.0..=1.0).contains(&a) && a < 0.0) {
            return Err(Error::InvalidConfig("weights must be >= 0".into()));
        }
        Ok(())
    }

    fn z_alpha(&self) -> f64 {
        stats::normal_quantile(1.0 - self.alpha)
    }
}

/// Asymptotic t-criterion t(a) = √N · E[a·τ] / √(E[a²·σ²]).
///
/// The all-zero assignment is defined as 0 (the null policy).
pub fn oracle_t(spec: &OracleSpec, assignment: &[f64]) -> Result<f64> {
    spec.check_assignment(assignment)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (cell, &a) in spec.cells.iter().zip(assignment) {
        num += cell.mass * a * cell.tau;
        den += cell.mass * a * a * cell.sigma_sq;
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(spec.holdout_size.sqrt() * num / den.sqrt())
}

/// Asymptotic power Φ(t(a) − z_{1−α}).
pub fn oracle_power(spec: &OracleSpec, assignment: &[f64]) -> Result<f64> {
    Ok(stats::normal_cdf(oracle_t(spec, assignment)? - spec.z_alpha()))
}

/// The power-maximizing probabilistic policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedOraclePolicy {
    /// Unnormalized weights τ₊(x)/σ²(x); the scale is irrelevant to t.
    pub weights: Vec<f64>,
    pub power: f64,
    /// Every effect was nonpositive: the zero policy with power α by
    /// convention.
    pub null_policy: bool,
}

/// Optimal relaxed weights a*(x) ∝ τ₊(x)/σ²(x) and the attained power
/// Φ(√(N·E[τ₊²/σ²]) − z_{1−α}).
pub fn relaxed_optimum(spec: &OracleSpec) -> Result<RelaxedOraclePolicy> {
    let weights: Vec<f64> = spec
        .cells
        .iter()
        .map(|c| c.tau.max(0.0) / c.sigma_sq)
        .collect();
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(RelaxedOraclePolicy {
            weights,
            power: spec.alpha,
            null_policy: true,
        });
    }
    let mean_ratio: f64 = spec
        .cells
        .iter()
        .map(|c| {
            let tau_plus = c.tau.max(0.0);
            c.mass * tau_plus * tau_plus / c.sigma_sq
        })
        .sum();
    let power = stats::normal_cdf((spec.holdout_size * mean_ratio).sqrt() - spec.z_alpha());
    Ok(RelaxedOraclePolicy {
        weights,
        power,
        null_policy: false,
    })
}

/// Value-weighted testing objective u(a)·Φ(t(a) − z_{1−α}) with the
/// local-to-zero lift u(a) = E[a·τ]/√N. Evaluation only; no optimizer.
pub fn constrained_objective(spec: &OracleSpec, assignment: &[f64]) -> Result<f64> {
    spec.check_assignment(assignment)?;
    let lift: f64 = spec
        .cells
        .iter()
        .zip(assignment)
        .map(|(c, &a)| c.mass * a * c.tau)
        .sum::<f64>()
        / spec.holdout_size.sqrt();
    let power = oracle_power(spec, assignment)?;
    Ok(lift * power)
}

/// Relabel outcomes against a reference assignment b: rows with b(x) = 1 get
/// their treatment indicator flipped, so the downstream test compares the
/// learned policy against following b instead of treating nobody.
pub fn relabel_reference<P: Policy + ?Sized>(data: &TrialDataset, reference: &P) -> TrialDataset {
    let flips: Vec<bool> = data
        .covariates()
        .rows()
        .map(|x| reference.assign(x) > 0.5)
        .collect();
    data.with_flipped_treatment(&flips)
}
