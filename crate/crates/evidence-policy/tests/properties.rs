//! Property-based invariants over randomized inputs.

use evidence_policy::centering::CenteringModel;
use evidence_policy::dataset::{generate_three_region, ThreeRegionDgpConfig};
use evidence_policy::oracle;
use evidence_policy::policy::CellTablePolicy;
use evidence_policy::ratio_opt::{
    bisection_solve, brute_force_best, ratio_prefix_fast_path, CellStatistics,
};
use evidence_policy::scoring::{self, PseudoOutcomeTable};
use evidence_policy::stats;
use evidence_policy::Policy;
use proptest::prelude::*;

fn pseudo_values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0..100.0f64, 2..40)
}

proptest! {
    #[test]
    fn squared_column_is_exactly_the_square(values in pseudo_values()) {
        let table = PseudoOutcomeTable::from_values(values.clone(), 0.5);
        for (a, b) in table.pseudo().iter().zip(table.pseudo_sq()) {
            prop_assert_eq!(a * a, *b);
        }
    }

    #[test]
    fn t_statistic_invariant_to_positive_rescaling(
        values in pseudo_values(),
        scale in 1e-3..1e3f64,
    ) {
        let mask = vec![1.0; values.len()];
        let base = PseudoOutcomeTable::from_values(values.clone(), 0.5);
        let scaled = PseudoOutcomeTable::from_values(
            values.iter().map(|v| v * scale).collect(),
            0.5,
        );
        let a = scoring::t_statistic(&base, &mask);
        let b = scoring::t_statistic(&scaled, &mask);
        match (a, b) {
            (Ok(ra), Ok(rb)) => {
                prop_assert!((ra.t_statistic - rb.t_statistic).abs() <= 1e-12
                    * ra.t_statistic.abs().max(1.0));
            }
            (Err(_), Err(_)) => {}
            (ra, rb) => prop_assert!(false, "degeneracy disagrees: {ra:?} vs {rb:?}"),
        }
    }

    #[test]
    fn p_value_strictly_decreasing_in_t(t1 in -6.0..25.0f64, gap in 1e-6..10.0f64) {
        // Range chosen so neither tail saturates in f64: below t ≈ −8 the
        // p-value rounds to exactly 1, past t ≈ 38 it underflows to 0.
        let p_low = stats::upper_tail_p(t1);
        let p_high = stats::upper_tail_p(t1 + gap);
        prop_assert!(p_high < p_low, "p({t1}) = {p_low} vs p({}) = {p_high}", t1 + gap);
    }

    #[test]
    fn prefix_fast_path_matches_brute_force(
        w in prop::collection::vec(-1.0..2.0f64, 1..=12),
        v_raw in prop::collection::vec(0.01..5.0f64, 12),
    ) {
        let k = w.len();
        let v = v_raw[..k].to_vec();
        let stats = CellStatistics::new((0..k).collect(), w, v).unwrap();
        let prefix = ratio_prefix_fast_path(&stats);
        let brute = brute_force_best(&stats);
        match (prefix, brute) {
            (Ok(a), Ok(b)) => prop_assert!((a.objective - b.objective).abs() <= 1e-12),
            (Err(_), Err(_)) => {} // no positive cell
            (a, b) => prop_assert!(false, "disagree: {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn bisection_meets_its_guarantee(
        w in prop::collection::vec(-1.0..2.0f64, 1..=10),
        v_raw in prop::collection::vec(0.01..5.0f64, 10),
        epsilon in 0.001..0.5f64,
    ) {
        let k = w.len();
        let v = v_raw[..k].to_vec();
        let stats = CellStatistics::new((0..k).collect(), w, v).unwrap();
        match (bisection_solve(&stats, epsilon), brute_force_best(&stats)) {
            (Ok(sol), Ok(best)) => {
                prop_assert!(sol.objective >= best.objective / (1.0 + epsilon) - 1e-12);
                prop_assert!(!sol.selected.is_empty());
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "disagree: {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn relabeling_twice_is_identity(seed in 0u64..1000, cutoff in 0.0..3.0f64) {
        let data = generate_three_region(&ThreeRegionDgpConfig::default(), 60, seed).unwrap();
        let reference = ThresholdPolicy { cutoff };
        let once = oracle::relabel_reference(&data, &reference);
        let twice = oracle::relabel_reference(&once, &reference);
        prop_assert_eq!(&twice, &data);
    }

    #[test]
    fn oracle_t_scale_invariance(
        taus in prop::collection::vec(-2.0..2.0f64, 1..=5),
        scale in 1e-3..1e3f64,
    ) {
        let k = taus.len();
        let cells: Vec<oracle::OracleCell> = taus
            .iter()
            .map(|&tau| oracle::OracleCell { mass: 1.0 / k as f64, tau, sigma_sq: 1.0 + tau * tau })
            .collect();
        let spec = oracle::OracleSpec::new(cells, 50.0, 0.05).unwrap();
        let w: Vec<f64> = (0..k).map(|i| 0.1 + 0.8 * (i as f64 / k as f64)).collect();
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let a = oracle::oracle_t(&spec, &w).unwrap();
        let b = oracle::oracle_t(&spec, &scaled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn holdout_test_p_value_is_a_probability(seed in 0u64..500) {
        let data = generate_three_region(&ThreeRegionDgpConfig::default(), 120, seed).unwrap();
        let policy = CellTablePolicy { weights: vec![1.0, 0.0, 1.0] };
        let routed = RegionPolicy { inner: policy };
        let result = scoring::holdout_test(
            &routed,
            &CenteringModel::constant_zero(),
            &data,
            0.05,
            scoring::Propensity::Empirical,
        );
        if let Ok(r) = result {
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert!(r.null_policy || r.std_error > 0.0);
            if !r.null_policy {
                // One-sided normal test: p = 1 − Φ(t).
                let direct = 1.0 - stats::normal_cdf(r.t_statistic);
                prop_assert!((r.p_value - direct).abs() <= 1e-12);
            }
        }
    }
}

/// Treat covariates above a cutoff.
struct ThresholdPolicy {
    cutoff: f64,
}

impl Policy for ThresholdPolicy {
    fn assign(&self, x: &[f64]) -> f64 {
        f64::from(x[0] > self.cutoff)
    }
}

/// Routes the scalar three-region covariate into a cell table by region.
struct RegionPolicy {
    inner: CellTablePolicy,
}

impl Policy for RegionPolicy {
    fn assign(&self, x: &[f64]) -> f64 {
        self.inner.assign(&[x[0].floor().min(2.0)])
    }
}
