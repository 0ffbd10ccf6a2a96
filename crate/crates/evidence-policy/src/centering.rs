//! Fitting the optimal centering function c(x).
//!
//! The variance-minimizing centering c₀(x) = (1−p)·E[Y|x,W=1] + p·E[Y|x,W=0]
//! is the minimizer of the weighted squared loss with per-row weights
//! W/p² + (1−W)/(1−p)², so the regression kinds here fit exactly that
//! weighted problem by greedy binary splits. Fold management is the caller's
//! job: when a pipeline needs honest centering it passes a disjoint fold.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cart::{self, TreeConfig, WeightedSquaredError};
use crate::dataset::TrialDataset;
use crate::{Error, Matrix, Result};

/// Model class for the centering fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenteringKind {
    ConstantZero,
    ConstantMean,
    RegressionTree,
    RegressionForest,
}

/// Hyperparameters for the regression kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenteringParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for CenteringParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 5,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum CenteringState {
    Constant(f64),
    Tree(cart::FittedTree),
    Forest(cart::FittedForest),
}

/// A fitted centering function; predictions are deterministic and the model
/// is immutable after fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringModel {
    pub kind: CenteringKind,
    state: CenteringState,
    n_features: usize,
    /// Set when a regression kind fell back to the weighted mean because all
    /// covariate rows were identical.
    pub degenerate_covariates: bool,
}

impl CenteringModel {
    /// The trivial c ≡ 0 model (usable with any covariate width).
    pub fn constant_zero() -> Self {
        Self {
            kind: CenteringKind::ConstantZero,
            state: CenteringState::Constant(0.0),
            n_features: 0,
            degenerate_covariates: false,
        }
    }

    /// Prediction for one covariate row.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match &self.state {
            CenteringState::Constant(c) => *c,
            CenteringState::Tree(tree) => tree.predict_row(x),
            CenteringState::Forest(forest) => forest.predict_row(x),
        }
    }

    /// One prediction per row; errors if the width differs from training.
    pub fn predict_all(&self, covariates: &Matrix) -> Result<Vec<f64>> {
        let width_sensitive = matches!(
            self.state,
            CenteringState::Tree(_) | CenteringState::Forest(_)
        );
        if width_sensitive && covariates.n_cols() != self.n_features {
            return Err(Error::WidthMismatch {
                expected: self.n_features,
                got: covariates.n_cols(),
            });
        }
        Ok(covariates.rows().map(|x| self.predict(x)).collect())
    }
}

/// Per-row weights W/p² + (1−W)/(1−p)² of the centering regression.
pub fn centering_weights(treatment: &[u8], treat_probability: f64) -> Vec<f64> {
    let p = treat_probability;
    treatment
        .iter()
        .map(|&w| {
            if w == 1 {
                1.0 / (p * p)
            } else {
                1.0 / ((1.0 - p) * (1.0 - p))
            }
        })
        .collect()
}

/// Fit a centering model of the requested kind.
pub fn fit_centering(
    data: &TrialDataset,
    kind: CenteringKind,
    treat_probability: f64,
    params: &CenteringParams,
    seed: u64,
) -> Result<CenteringModel> {
    if !(treat_probability > 0.0 && treat_probability < 1.0) {
        return Err(Error::InvalidConfig(
            "treat_probability must lie in (0,1)".into(),
        ));
    }
    let n = data.n_rows();
    match kind {
        CenteringKind::ConstantZero => Ok(CenteringModel {
            n_features: data.n_features(),
            ..CenteringModel::constant_zero()
        }),
        CenteringKind::ConstantMean => {
            let mean = data.outcome().iter().sum::<f64>() / n as f64;
            Ok(CenteringModel {
                kind,
                state: CenteringState::Constant(mean),
                n_features: data.n_features(),
                degenerate_covariates: false,
            })
        }
        CenteringKind::RegressionTree | CenteringKind::RegressionForest => {
            if n < 2 {
                return Err(Error::InvalidConfig(
                    "regression centering needs n >= 2".into(),
                ));
            }
            let weights = centering_weights(data.treatment(), treat_probability);
            let criterion = WeightedSquaredError {
                targets: data.outcome(),
                weights: &weights,
            };
            if covariates_degenerate(data.covariates()) {
                let acc = (0..n).fold(cart::WeightedMoments::default(), |a, i| {
                    a + cart::WeightedMoments {
                        w: weights[i],
                        wy: weights[i] * data.outcome()[i],
                        wyy: 0.0,
                    }
                });
                return Ok(CenteringModel {
                    kind,
                    state: CenteringState::Constant(acc.wy / acc.w),
                    n_features: data.n_features(),
                    degenerate_covariates: true,
                });
            }
            let config = TreeConfig {
                max_depth: params.max_depth,
                min_leaf: params.min_leaf,
                mtry: None,
            };
            let rows: Vec<usize> = (0..n).collect();
            let state = match kind {
                CenteringKind::RegressionTree => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    CenteringState::Tree(cart::fit_tree(
                        &criterion,
                        data.covariates(),
                        &rows,
                        &config,
                        &mut rng,
                    ))
                }
                _ => CenteringState::Forest(cart::fit_forest(
                    &criterion,
                    data.covariates(),
                    params.n_trees,
                    &config,
                    seed,
                )),
            };
            Ok(CenteringModel {
                kind,
                state,
                n_features: data.n_features(),
                degenerate_covariates: false,
            })
        }
    }
}

fn covariates_degenerate(covariates: &Matrix) -> bool {
    let first = covariates.row(0).to_vec();
    covariates.rows().all(|r| r == first.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset;
    use approx::assert_abs_diff_eq;

    fn two_cell_balanced() -> TrialDataset {
        // Cell 0: treated y = 4, 6; control y = 1, 1.
        // Cell 1: treated y = 10, 12; control y = 2, 4.
        let xs = vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let ws = vec![1, 1, 0, 0, 1, 1, 0, 0];
        let ys = vec![4.0, 6.0, 1.0, 1.0, 10.0, 12.0, 2.0, 4.0];
        TrialDataset::new(Matrix::from_column(xs), ws, ys).unwrap()
    }

    #[test]
    fn constant_zero_predicts_zero_anywhere() {
        let data = two_cell_balanced();
        let model = fit_centering(
            &data,
            CenteringKind::ConstantZero,
            0.5,
            &CenteringParams::default(),
            0,
        )
        .unwrap();
        assert_eq!(model.predict(&[123.0]), 0.0);
        assert_eq!(model.predict(&[-5.0, 7.0]), 0.0);
    }

    #[test]
    fn constant_mean_predicts_training_mean() {
        let data = TrialDataset::new(
            Matrix::from_column(vec![0.0, 1.0]),
            vec![1, 0],
            vec![1.0, 3.0],
        )
        .unwrap();
        let model = fit_centering(
            &data,
            CenteringKind::ConstantMean,
            0.5,
            &CenteringParams::default(),
            0,
        )
        .unwrap();
        assert_eq!(model.predict(&[0.0]), 2.0);
        assert_eq!(model.predict(&[42.0]), 2.0);
    }

    #[test]
    fn balanced_half_propensity_recovers_arm_average_per_cell() {
        // With p = 1/2 and balanced arms, the weighted leaf mean reduces to
        // (mean treated + mean control) / 2 per cell.
        let data = two_cell_balanced();
        let model = fit_centering(
            &data,
            CenteringKind::RegressionTree,
            0.5,
            &CenteringParams {
                max_depth: 2,
                min_leaf: 1,
                ..CenteringParams::default()
            },
            0,
        )
        .unwrap();
        assert_abs_diff_eq!(model.predict(&[0.0]), (5.0 + 1.0) / 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(model.predict(&[1.0]), (11.0 + 3.0) / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn weighted_leaf_values_match_hand_computed_weighted_means() {
        // Unbalanced arms, p = 0.25: weights are 16 for treated, 16/9 for
        // control; the leaf value is the weighted mean of the y's.
        let xs = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let ws = vec![1, 0, 0, 1, 1, 0];
        let ys = vec![8.0, 2.0, 4.0, 9.0, 7.0, 1.0];
        let data = TrialDataset::new(Matrix::from_column(xs), ws, ys).unwrap();
        let p: f64 = 0.25;
        let (wt, wc) = (1.0 / (p * p), 1.0 / ((1.0 - p) * (1.0 - p)));
        let cell0 = (wt * 8.0 + wc * 2.0 + wc * 4.0) / (wt + 2.0 * wc);
        let cell1 = (wt * 9.0 + wt * 7.0 + wc * 1.0) / (2.0 * wt + wc);
        let model = fit_centering(
            &data,
            CenteringKind::RegressionTree,
            p,
            &CenteringParams {
                max_depth: 3,
                min_leaf: 1,
                ..CenteringParams::default()
            },
            0,
        )
        .unwrap();
        assert_abs_diff_eq!(model.predict(&[0.0]), cell0, epsilon = 1e-10);
        assert_abs_diff_eq!(model.predict(&[1.0]), cell1, epsilon = 1e-10);
    }

    #[test]
    fn identical_arms_without_noise_recover_g_at_training_points() {
        // Y = g(X) in both arms: the weighted loss is zero at c = g.
        let xs: Vec<f64> = (0..40).map(|i| f64::from(i % 4)).collect();
        let ws: Vec<u8> = (0..40).map(|i| (i / 4 % 2) as u8).collect();
        let g = |x: f64| 3.0 * x - 1.0;
        let ys: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
        let data = TrialDataset::new(Matrix::from_column(xs.clone()), ws, ys).unwrap();
        let model = fit_centering(
            &data,
            CenteringKind::RegressionTree,
            0.5,
            &CenteringParams {
                max_depth: 4,
                min_leaf: 1,
                ..CenteringParams::default()
            },
            0,
        )
        .unwrap();
        for &x in xs.iter().take(4) {
            assert_abs_diff_eq!(model.predict(&[x]), g(x), epsilon = 1e-10);
        }
    }

    #[test]
    fn depth_zero_tree_equals_weighted_global_mean() {
        let data = two_cell_balanced();
        let model = fit_centering(
            &data,
            CenteringKind::RegressionTree,
            0.3,
            &CenteringParams {
                max_depth: 0,
                min_leaf: 1,
                ..CenteringParams::default()
            },
            0,
        )
        .unwrap();
        let weights = centering_weights(data.treatment(), 0.3);
        let num: f64 = weights
            .iter()
            .zip(data.outcome())
            .map(|(w, y)| w * y)
            .sum();
        let den: f64 = weights.iter().sum();
        assert_abs_diff_eq!(model.predict(&[0.0]), num / den, epsilon = 1e-12);
    }

    #[test]
    fn forest_prediction_averages_its_trees() {
        let data = dataset::generate_three_region(
            &dataset::ThreeRegionDgpConfig::default(),
            300,
            5,
        )
        .unwrap();
        let model = fit_centering(
            &data,
            CenteringKind::RegressionForest,
            0.5,
            &CenteringParams {
                n_trees: 10,
                ..CenteringParams::default()
            },
            7,
        )
        .unwrap();
        let CenteringState::Forest(forest) = &model.state else {
            panic!("expected forest state");
        };
        let x = [1.7];
        let manual: f64 =
            forest.trees.iter().map(|t| t.predict_row(&x)).sum::<f64>() / forest.trees.len() as f64;
        assert_abs_diff_eq!(model.predict(&x), manual, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_covariates_fall_back_to_weighted_mean_with_flag() {
        let data = TrialDataset::new(
            Matrix::from_column(vec![2.0, 2.0, 2.0, 2.0]),
            vec![1, 0, 1, 0],
            vec![1.0, 5.0, 3.0, 7.0],
        )
        .unwrap();
        let model = fit_centering(
            &data,
            CenteringKind::RegressionForest,
            0.5,
            &CenteringParams::default(),
            0,
        )
        .unwrap();
        assert!(model.degenerate_covariates);
        assert_abs_diff_eq!(model.predict(&[2.0]), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn predict_all_checks_width() {
        let data = two_cell_balanced();
        let model = fit_centering(
            &data,
            CenteringKind::RegressionTree,
            0.5,
            &CenteringParams::default(),
            0,
        )
        .unwrap();
        let wide = Matrix::from_vec_of_rows(vec![vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            model.predict_all(&wide),
            Err(Error::WidthMismatch { .. })
        ));
    }
}
