//! Pseudo-outcomes, policy-value estimators, the t-statistic objective, and
//! the one-sided hold-out test.
//!
//! Conventions: STD uses the n−1 denominator, the t-statistic carries the √n
//! factor implied by Var̂(û) = Σ(ρᵢ−û)²/(N(N−1)), and p-values come from the
//! upper normal tail. A policy that assigns nobody on the hold-out sample is
//! reported with p = 1 and a null-policy flag rather than an error.

use serde::{Deserialize, Serialize};

use crate::centering::CenteringModel;
use crate::dataset::TrialDataset;
use crate::policy::Policy;
use crate::stats;
use crate::{Error, Result};

/// How the treatment propensity enters the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propensity {
    /// A known randomization probability in (0,1).
    Known(f64),
    /// The sample treated fraction of the dataset at hand.
    Empirical,
}

impl Propensity {
    /// Resolve to a number for the given dataset.
    pub fn resolve(&self, data: &TrialDataset) -> Result<f64> {
        match *self {
            Propensity::Known(p) => {
                if p > 0.0 && p < 1.0 {
                    Ok(p)
                } else {
                    Err(Error::InvalidConfig(format!(
                        "known propensity must lie in (0,1), got {p}"
                    )))
                }
            }
            Propensity::Empirical => {
                let p = data.treated_fraction();
                if p == 0.0 || p == 1.0 {
                    Err(Error::SingleArm)
                } else {
                    Ok(p)
                }
            }
        }
    }
}

/// Per-row centered IPS pseudo-outcomes Ỹᵢ and their squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoOutcomeTable {
    pseudo: Vec<f64>,
    pseudo_sq: Vec<f64>,
    treat_probability_used: f64,
}

impl PseudoOutcomeTable {
    /// Build directly from pseudo-outcome values. This is also the hook for
    /// alternative moment-based pseudo-outcomes: any ψ(Z; h) values can be
    /// loaded here and every downstream learner applies unchanged.
    pub fn from_values(pseudo: Vec<f64>, treat_probability_used: f64) -> Self {
        let pseudo_sq = pseudo.iter().map(|v| v * v).collect();
        Self {
            pseudo,
            pseudo_sq,
            treat_probability_used,
        }
    }

    pub fn pseudo(&self) -> &[f64] {
        &self.pseudo
    }

    pub fn pseudo_sq(&self) -> &[f64] {
        &self.pseudo_sq
    }

    pub fn treat_probability_used(&self) -> f64 {
        self.treat_probability_used
    }

    pub fn len(&self) -> usize {
        self.pseudo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pseudo.is_empty()
    }
}

/// Ỹᵢ = (Yᵢ − c(Xᵢ)) · (Wᵢ/p − (1−Wᵢ)/(1−p)).
pub fn pseudo_outcomes(
    data: &TrialDataset,
    centering: &CenteringModel,
    propensity: Propensity,
) -> Result<PseudoOutcomeTable> {
    let p = propensity.resolve(data)?;
    let centered = centering.predict_all(data.covariates())?;
    let pseudo = data
        .outcome()
        .iter()
        .zip(data.treatment())
        .zip(&centered)
        .map(|((&y, &w), &c)| (y - c) * ips_weight(w, p))
        .collect();
    Ok(PseudoOutcomeTable::from_values(pseudo, p))
}

fn ips_weight(w: u8, p: f64) -> f64 {
    if w == 1 {
        1.0 / p
    } else {
        -1.0 / (1.0 - p)
    }
}

/// Plain inverse-propensity value estimate V_IPS(a).
pub fn value_ips<P: Policy + ?Sized>(
    data: &TrialDataset,
    policy: &P,
    propensity: Propensity,
) -> Result<f64> {
    value_centered(data, policy, &CenteringModel::constant_zero(), propensity)
}

/// Centered IPS value estimate V_c(a).
pub fn value_centered<P: Policy + ?Sized>(
    data: &TrialDataset,
    policy: &P,
    centering: &CenteringModel,
    propensity: Propensity,
) -> Result<f64> {
    let table = pseudo_outcomes(data, centering, propensity)?;
    let mask = policy.assign_all(data.covariates());
    Ok(mask
        .iter()
        .zip(table.pseudo())
        .map(|(a, t)| a * t)
        .sum::<f64>()
        / data.n_rows() as f64)
}

/// A fitted two-arm outcome model g(x, w).
pub trait OutcomeModel {
    fn predict_arm(&self, x: &[f64], treated: bool) -> f64;
}

impl<F: Fn(&[f64], bool) -> f64> OutcomeModel for F {
    fn predict_arm(&self, x: &[f64], treated: bool) -> f64 {
        self(x, treated)
    }
}

/// Doubly-robust value estimate V_DR(a). Identical to `value_centered` with
/// c(x) = (1−p)·g(x,1) + p·g(x,0); kept as an independent code path so the
/// identity can be tested rather than assumed.
pub fn value_dr<P: Policy + ?Sized, G: OutcomeModel>(
    data: &TrialDataset,
    policy: &P,
    outcome_model: &G,
    propensity: Propensity,
) -> Result<f64> {
    let p = propensity.resolve(data)?;
    let n = data.n_rows() as f64;
    let mask = policy.assign_all(data.covariates());
    let mut total = 0.0;
    for (i, &a) in mask.iter().enumerate() {
        let x = data.covariates().row(i);
        let g1 = outcome_model.predict_arm(x, true);
        let g0 = outcome_model.predict_arm(x, false);
        if !g1.is_finite() || !g0.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "outcome model produced a non-finite arm prediction at row {i}"
            )));
        }
        let w = data.treatment()[i];
        let g_obs = if w == 1 { g1 } else { g0 };
        let residual = (data.outcome()[i] - g_obs) * ips_weight(w, p);
        total += a * (g1 - g0 + residual);
    }
    Ok(total / n)
}

/// Result of a one-sided test of positive policy value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub t_statistic: f64,
    /// One-sided p-value 1 − Φ(t); exactly 1 for a flagged null policy.
    pub p_value: f64,
    /// Number of rows the policy assigns a positive weight; the statistic
    /// itself always runs over the full sample.
    pub n_effective: usize,
    /// Point estimate û(a), the mean masked pseudo-outcome.
    pub estimate: f64,
    /// Standard error √(Σ(ρᵢ−û)²/(N(N−1))); 0 for a flagged null policy.
    pub std_error: f64,
    /// Set when the policy assigned weight 0 to every row.
    pub null_policy: bool,
}

impl TestResult {
    /// Pass/fail at significance level `alpha`.
    pub fn passes(&self, alpha: f64) -> bool {
        !self.null_policy && self.p_value <= alpha
    }
}

/// t-statistic of the masked pseudo-outcomes ρᵢ = aᵢ·Ỹᵢ:
/// t = √n · AVG(ρ)/STD(ρ) with the n−1 STD denominator.
///
/// A zero STD is signalled as [`Error::DegenerateStatistic`]; an all-zero
/// mask is returned as a flagged null-policy result with p = 1.
pub fn t_statistic(pseudo: &PseudoOutcomeTable, policy_mask: &[f64]) -> Result<TestResult> {
    if pseudo.len() != policy_mask.len() {
        return Err(Error::InvalidConfig(format!(
            "mask length {} does not match table length {}",
            policy_mask.len(),
            pseudo.len()
        )));
    }
    let n = pseudo.len();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "t-statistic needs at least 2 rows".into(),
        ));
    }
    let n_effective = policy_mask.iter().filter(|&&a| a > 0.0).count();
    if n_effective == 0 {
        return Ok(TestResult {
            t_statistic: 0.0,
            p_value: 1.0,
            n_effective: 0,
            estimate: 0.0,
            std_error: 0.0,
            null_policy: true,
        });
    }
    let rho: Vec<f64> = policy_mask
        .iter()
        .zip(pseudo.pseudo())
        .map(|(a, t)| a * t)
        .collect();
    let nf = n as f64;
    let mean = rho.iter().sum::<f64>() / nf;
    let ss: f64 = rho.iter().map(|r| (r - mean) * (r - mean)).sum();
    let var = ss / (nf - 1.0);
    if var <= 0.0 {
        return Err(Error::DegenerateStatistic);
    }
    let std_error = (var / nf).sqrt();
    let t = mean / std_error;
    Ok(TestResult {
        t_statistic: t,
        p_value: stats::upper_tail_p(t),
        n_effective,
        estimate: mean,
        std_error,
        null_policy: false,
    })
}

/// The normalized ratio objective V_n(a) = AVG(ρ) / √(AVG(ρ²)).
///
/// Returns 0 when both numerator and denominator vanish; a zero denominator
/// with a nonzero numerator is impossible by Cauchy–Schwarz and asserted.
pub fn normalized_objective(pseudo: &PseudoOutcomeTable, policy_mask: &[f64]) -> f64 {
    let n = pseudo.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, (t, t2)) in policy_mask
        .iter()
        .zip(pseudo.pseudo().iter().zip(pseudo.pseudo_sq()))
    {
        num += a * t;
        den += a * a * t2;
    }
    num /= n;
    den /= n;
    if den == 0.0 {
        assert!(
            num == 0.0,
            "nonzero mean with zero second moment violates Cauchy-Schwarz"
        );
        return 0.0;
    }
    num / den.sqrt()
}

/// Apply a trained policy to hold-out data and run the one-sided test.
///
/// The centering model must have been fitted on training data only; this
/// function evaluates it on the hold-out rows, never refits.
pub fn holdout_test<P: Policy + ?Sized>(
    policy: &P,
    centering: &CenteringModel,
    holdout: &TrialDataset,
    alpha: f64,
    propensity: Propensity,
) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig("alpha must lie in (0,1)".into()));
    }
    let table = pseudo_outcomes(holdout, centering, propensity)?;
    let mask = policy.assign_all(holdout.covariates());
    t_statistic(&table, &mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_cell_dgp, CellDgpConfig};
    use crate::policy::ConstantPolicy;
    use crate::{Matrix, Policy};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn table(values: &[f64]) -> PseudoOutcomeTable {
        PseudoOutcomeTable::from_values(values.to_vec(), 0.5)
    }

    fn tiny_dataset(xs: Vec<f64>, ws: Vec<u8>, ys: Vec<f64>) -> TrialDataset {
        TrialDataset::new(Matrix::from_column(xs), ws, ys).unwrap()
    }

    struct MaskPolicy(Vec<f64>);
    impl Policy for MaskPolicy {
        fn assign(&self, x: &[f64]) -> f64 {
            self.0[x[0] as usize]
        }
    }

    #[test]
    fn pseudo_outcomes_zero_when_centering_matches_outcome() {
        let data = tiny_dataset(vec![0.0, 1.0], vec![1, 0], vec![2.0, 2.0]);
        let model = crate::centering::fit_centering(
            &data,
            crate::centering::CenteringKind::ConstantMean,
            0.5,
            &crate::centering::CenteringParams::default(),
            0,
        )
        .unwrap();
        let t = pseudo_outcomes(&data, &model, Propensity::Known(0.5)).unwrap();
        assert!(t.pseudo().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pseudo_outcomes_hand_values() {
        let data = tiny_dataset(vec![0.0, 1.0], vec![1, 0], vec![3.0, 3.0]);
        let zero = CenteringModel::constant_zero();
        let t = pseudo_outcomes(&data, &zero, Propensity::Known(0.5)).unwrap();
        assert_abs_diff_eq!(t.pseudo()[0], 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.pseudo()[1], -6.0, epsilon = 1e-15);
        assert_eq!(t.pseudo_sq()[0], 36.0);
    }

    #[test]
    fn pseudo_outcome_mean_recovers_cell_effects() {
        // E[Ỹ | X = x] ≈ τ(x) for any fixed centering.
        let config = CellDgpConfig {
            cell_count: 2,
            cell_effects: vec![40.0, -20.0],
            cell_noise_sd: vec![1.0, 1.0],
            samples_per_cell: 50_000,
        };
        let data = generate_cell_dgp(&config, 3).unwrap();
        let zero = CenteringModel::constant_zero();
        let mean_model = crate::centering::fit_centering(
            &data,
            crate::centering::CenteringKind::ConstantMean,
            0.5,
            &crate::centering::CenteringParams::default(),
            0,
        )
        .unwrap();
        for centering in [&zero, &mean_model] {
            let t = pseudo_outcomes(&data, centering, Propensity::Known(0.5)).unwrap();
            for cell in 0..2 {
                let vals: Vec<f64> = (0..data.n_rows())
                    .filter(|&i| data.covariates().get(i, 0) as usize == cell)
                    .map(|i| t.pseudo()[i])
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (vals.len() - 1) as f64;
                let se = (var / vals.len() as f64).sqrt();
                let expected = config.effect_in_cell(cell);
                assert!((mean - expected).abs() < 3.0 * se, "cell {cell}");
            }
        }
    }

    #[test]
    fn empirical_propensity_requires_both_arms() {
        let data = tiny_dataset(vec![0.0, 1.0], vec![1, 1], vec![1.0, 2.0]);
        let zero = CenteringModel::constant_zero();
        assert!(matches!(
            pseudo_outcomes(&data, &zero, Propensity::Empirical),
            Err(Error::SingleArm)
        ));
    }

    #[test]
    fn value_ips_hand_cases() {
        let data = tiny_dataset(vec![0.0, 1.0], vec![1, 0], vec![1.0, 1.0]);
        assert_eq!(
            value_ips(&data, &ConstantPolicy(0.0), Propensity::Known(0.5)).unwrap(),
            0.0
        );
        // (2 - 2) / 2 = 0
        assert_abs_diff_eq!(
            value_ips(&data, &ConstantPolicy(1.0), Propensity::Known(0.5)).unwrap(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn value_centered_with_zero_centering_matches_ips() {
        let data = tiny_dataset(vec![0.0, 1.0, 0.0], vec![1, 0, 0], vec![1.5, -2.0, 0.5]);
        let ips = value_ips(&data, &ConstantPolicy(1.0), Propensity::Known(0.4)).unwrap();
        let cen = value_centered(
            &data,
            &ConstantPolicy(1.0),
            &CenteringModel::constant_zero(),
            Propensity::Known(0.4),
        )
        .unwrap();
        assert_eq!(ips, cen);
    }

    #[test]
    fn constant_shift_leaves_value_unchanged_on_balanced_arms() {
        let data = tiny_dataset(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![1, 0, 1, 0],
            vec![5.0, 2.0, 3.0, 4.0],
        );
        let shift = crate::centering::fit_centering(
            &data,
            crate::centering::CenteringKind::ConstantMean,
            0.5,
            &crate::centering::CenteringParams::default(),
            0,
        )
        .unwrap();
        let v_shift = value_centered(&data, &ConstantPolicy(1.0), &shift, Propensity::Known(0.5))
            .unwrap();
        let v_ips = value_ips(&data, &ConstantPolicy(1.0), Propensity::Known(0.5)).unwrap();
        assert_abs_diff_eq!(v_shift, v_ips, epsilon = 1e-12);
    }

    #[test]
    fn value_dr_with_exact_model_on_noiseless_data() {
        // Y determined by (x, w): residual term vanishes, V_DR is the direct
        // contrast mean.
        let g = |x: &[f64], treated: bool| x[0] * 2.0 + if treated { 3.0 } else { 1.0 };
        let xs = vec![0.0, 1.0, 2.0, 3.0];
        let ws = vec![1, 0, 1, 0];
        let ys: Vec<f64> = xs
            .iter()
            .zip(&ws)
            .map(|(&x, &w)| g(&[x], w == 1))
            .collect();
        let data = tiny_dataset(xs, ws, ys);
        let v = value_dr(&data, &ConstantPolicy(1.0), &g, Propensity::Known(0.5)).unwrap();
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-12);
        let v0 = value_dr(&data, &ConstantPolicy(0.0), &g, Propensity::Known(0.5)).unwrap();
        assert_eq!(v0, 0.0);
    }

    #[test]
    fn dr_equals_optimally_centered_ips_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.gen_range(2..30);
            let p = rng.gen_range(0.2..0.8);
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..4.0_f64).floor()).collect();
            let ws: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let data = tiny_dataset(xs.clone(), ws, ys);
            let (a0, a1) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let (b0, b1) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let g = move |x: &[f64], treated: bool| {
                if treated {
                    a0 + a1 * x[0]
                } else {
                    b0 + b1 * x[0]
                }
            };
            let mask: Vec<f64> = (0..4).map(|_| f64::from(rng.gen_bool(0.5))).collect();
            let policy = MaskPolicy(mask);
            let v_dr = value_dr(&data, &policy, &g, Propensity::Known(p)).unwrap();

            let c_values: Vec<f64> = data
                .covariates()
                .rows()
                .map(|x| (1.0 - p) * g(x, true) + p * g(x, false))
                .collect();
            let table = PseudoOutcomeTable::from_values(
                data.outcome()
                    .iter()
                    .zip(data.treatment())
                    .zip(&c_values)
                    .map(|((&y, &w), &c)| (y - c) * ips_weight(w, p))
                    .collect(),
                p,
            );
            let mask_vals = policy.assign_all(data.covariates());
            let v_c = mask_vals
                .iter()
                .zip(table.pseudo())
                .map(|(a, t)| a * t)
                .sum::<f64>()
                / data.n_rows() as f64;
            assert_abs_diff_eq!(v_dr, v_c, epsilon = 1e-12);
        }
    }

    #[test]
    fn t_statistic_hand_cases() {
        let r = t_statistic(&table(&[1.0, -1.0]), &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(r.t_statistic, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.p_value, 0.5, epsilon = 1e-12);

        let r = t_statistic(&table(&[2.0, 0.0, 2.0, 0.0]), &[1.0; 4]).unwrap();
        assert_abs_diff_eq!(r.t_statistic, 2.0 / (4.0_f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.p_value, 0.0416, epsilon = 5e-4);
        assert_eq!(r.n_effective, 4);

        assert!(matches!(
            t_statistic(&table(&[3.0, 3.0, 3.0]), &[1.0; 3]),
            Err(Error::DegenerateStatistic)
        ));
    }

    #[test]
    fn t_statistic_null_mask_is_flagged() {
        let r = t_statistic(&table(&[1.0, 2.0, 3.0]), &[0.0; 3]).unwrap();
        assert!(r.null_policy);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.passes(0.05));
    }

    #[test]
    fn normalized_objective_cases() {
        assert_abs_diff_eq!(
            normalized_objective(&table(&[1.0, 1.0, 1.0, 1.0]), &[1.0; 4]),
            1.0,
            epsilon = 1e-15
        );
        assert_eq!(normalized_objective(&table(&[1.0, -1.0]), &[1.0, 1.0]), 0.0);
        assert_eq!(normalized_objective(&table(&[1.0, -1.0]), &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn vn_and_zn_order_policies_identically_when_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.gen_range(4..20);
            let t = table(
                &(0..n)
                    .map(|_| rng.gen_range(-1.0..3.0))
                    .collect::<Vec<f64>>(),
            );
            let mask_a: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
            let mask_b: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.5))).collect();
            let (Ok(za), Ok(zb)) = (t_statistic(&t, &mask_a), t_statistic(&t, &mask_b)) else {
                continue;
            };
            if za.null_policy || zb.null_policy {
                continue;
            }
            let va = normalized_objective(&t, &mask_a);
            let vb = normalized_objective(&t, &mask_b);
            if za.t_statistic > 0.0 && zb.t_statistic > 0.0 && va != vb {
                assert_eq!(
                    za.t_statistic > zb.t_statistic,
                    va > vb,
                    "orderings disagree: Z ({}, {}) vs V ({}, {})",
                    za.t_statistic,
                    zb.t_statistic,
                    va,
                    vb
                );
            }
        }
    }

    #[test]
    fn holdout_null_policy_convention() {
        let data = tiny_dataset(vec![0.0, 1.0], vec![1, 0], vec![1.0, 2.0]);
        let r = holdout_test(
            &ConstantPolicy(0.0),
            &CenteringModel::constant_zero(),
            &data,
            0.05,
            Propensity::Known(0.5),
        )
        .unwrap();
        assert!(r.null_policy);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.passes(0.99));
    }

    #[test]
    fn holdout_power_on_easy_cell_instance() {
        // One cell, large effect, tiny noise, N = 10000: p far below 1e-6.
        let config = CellDgpConfig {
            cell_count: 1,
            cell_effects: vec![50.0],
            cell_noise_sd: vec![0.5],
            samples_per_cell: 10_000,
        };
        let data = generate_cell_dgp(&config, 12).unwrap();
        let r = holdout_test(
            &ConstantPolicy(1.0),
            &CenteringModel::constant_zero(),
            &data,
            0.05,
            Propensity::Empirical,
        )
        .unwrap();
        assert!(r.p_value < 1e-6, "p = {}", r.p_value);
        assert!(r.passes(0.05));
    }
}
