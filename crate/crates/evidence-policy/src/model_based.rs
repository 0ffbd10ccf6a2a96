//! Model-based policy learning: estimate the conditional mean and second
//! moment of the pseudo-outcome with depth-r level-split regression trees,
//! intersect their leaves into cells, and pick the treated cell subset with
//! the ratio optimizer.
//!
//! Level-split trees choose one split feature per depth level, shared by
//! every node of that level, by the variance-reduction criterion
//! V(S; g) = Ê[Ê[g|X_S]²]. The analysis class is binary features, so
//! continuous features are binarized first: features with more than two
//! distinct training values split at their empirical median, two-valued
//! features at the midpoint of their values (which keeps 0/1 features
//! intact), and constant features become all-zero indicators.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::centering::CenteringModel;
use crate::dataset::{empirical_median, TrialDataset};
use crate::policy::Policy;
use crate::ratio_opt::{self, RatioSolution};
use crate::scoring::{self, Propensity};
use crate::{Error, Matrix, Result};

/// Per-feature indicator rules x > threshold learned from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binarizer {
    pub thresholds: Vec<f64>,
}

impl Binarizer {
    pub fn fit(covariates: &Matrix) -> Self {
        let thresholds = (0..covariates.n_cols())
            .map(|j| {
                let col = covariates.column(j);
                let mut distinct = col.clone();
                distinct.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
                distinct.dedup();
                match distinct.len() {
                    1 => distinct[0], // constant feature: indicator always 0
                    2 => 0.5 * (distinct[0] + distinct[1]),
                    _ => empirical_median(&col),
                }
            })
            .collect();
        Self { thresholds }
    }

    pub fn indicator(&self, x: &[f64], feature: usize) -> bool {
        x[feature] > self.thresholds[feature]
    }

    /// 0/1 matrix of indicators.
    pub fn apply(&self, covariates: &Matrix) -> Matrix {
        let data: Vec<f64> = covariates
            .rows()
            .flat_map(|x| (0..x.len()).map(move |j| f64::from(u8::from(self.indicator(x, j)))))
            .collect();
        Matrix::from_rows(data, covariates.n_rows(), covariates.n_cols())
            .expect("shape preserved")
    }
}

/// A depth-r regression tree with one split feature per level; leaves are
/// indexed by the bit pattern of their level indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSplitTree {
    /// Chosen feature per level, in order.
    pub level_features: Vec<usize>,
    /// Training-label mean per leaf (index = bit pattern); empty leaves fall
    /// back to the mean of the deepest nonempty ancestor group.
    pub leaf_means: Vec<f64>,
    /// Set when fewer levels than requested could be built because the
    /// feature pool ran out.
    pub stopped_early: bool,
}

impl LevelSplitTree {
    pub fn depth(&self) -> usize {
        self.level_features.len()
    }

    /// Leaf index of a binarized row.
    pub fn leaf_of(&self, indicators: &[bool]) -> usize {
        self.level_features
            .iter()
            .enumerate()
            .map(|(level, &f)| usize::from(indicators[f]) << level)
            .sum()
    }

    pub fn predict(&self, indicators: &[bool]) -> f64 {
        self.leaf_means[self.leaf_of(indicators)]
    }
}

/// Fit a level-split tree on binary (0/1-valued) covariates.
///
/// At each level the feature maximizing the aggregate within-leaf
/// mean-square Σ n_g·mean_g² is chosen (ties to the lowest index), every
/// leaf splits on it, and a feature is never reused.
pub fn fit_level_split_tree(
    labels: &[f64],
    binary_covariates: &Matrix,
    depth: usize,
) -> Result<LevelSplitTree> {
    let n = binary_covariates.n_rows();
    if labels.len() != n {
        return Err(Error::InvalidConfig(format!(
            "labels ({}) and covariates ({n}) disagree on rows",
            labels.len()
        )));
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("labels must be finite".into()));
    }
    let p = binary_covariates.n_cols();
    let indicator = |i: usize, j: usize| binary_covariates.get(i, j) > 0.5;

    let mut level_features: Vec<usize> = Vec::new();
    let mut leaf_of_row: Vec<usize> = vec![0; n];

    for level in 0..depth {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..p {
            if level_features.contains(&j) {
                continue;
            }
            // Score V̂·n of the partition refined by feature j.
            let groups = 1usize << (level + 1);
            let mut count = vec![0.0f64; groups];
            let mut sum = vec![0.0f64; groups];
            for i in 0..n {
                let g = leaf_of_row[i] | (usize::from(indicator(i, j)) << level);
                count[g] += 1.0;
                sum[g] += labels[i];
            }
            let score: f64 = (0..groups)
                .filter(|&g| count[g] > 0.0)
                .map(|g| sum[g] * sum[g] / count[g])
                .sum();
            if best.is_none() || best.is_some_and(|(_, s)| score > s) {
                best = Some((j, score));
            }
        }
        let Some((feature, _)) = best else {
            // Feature pool exhausted before reaching the requested depth.
            break;
        };
        level_features.push(feature);
        for (i, leaf) in leaf_of_row.iter_mut().enumerate() {
            *leaf |= usize::from(indicator(i, feature)) << level;
        }
    }
    let stopped_early = level_features.len() < depth;

    // Leaf means with ancestor fallback for empty leaves.
    let built = level_features.len();
    let mut count_by_depth: Vec<Vec<f64>> = (0..=built).map(|d| vec![0.0; 1 << d]).collect();
    let mut sum_by_depth: Vec<Vec<f64>> = (0..=built).map(|d| vec![0.0; 1 << d]).collect();
    for i in 0..n {
        for d in 0..=built {
            let prefix = leaf_of_row[i] & ((1 << d) - 1);
            count_by_depth[d][prefix] += 1.0;
            sum_by_depth[d][prefix] += labels[i];
        }
    }
    let leaf_means = (0..(1usize << built))
        .map(|leaf| {
            for d in (0..=built).rev() {
                let prefix = leaf & ((1 << d) - 1);
                if count_by_depth[d][prefix] > 0.0 {
                    return sum_by_depth[d][prefix] / count_by_depth[d][prefix];
                }
            }
            unreachable!("depth 0 group holds every row")
        })
        .collect();

    Ok(LevelSplitTree {
        level_features,
        leaf_means,
        stopped_early,
    })
}

/// Partition of the covariate space into cells formed by intersecting the
/// leaves of the mean tree and the second-moment tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPartition {
    pub binarizer: Binarizer,
    pub mean_tree: LevelSplitTree,
    pub second_moment_tree: LevelSplitTree,
}

impl CellPartition {
    fn indicators(&self, x: &[f64]) -> Vec<bool> {
        (0..x.len()).map(|j| self.binarizer.indicator(x, j)).collect()
    }

    /// Cell id of a raw covariate row: the pair of leaf indices, flattened.
    pub fn cell_of(&self, x: &[f64]) -> usize {
        let indicators = self.indicators(x);
        let leaf_mean = self.mean_tree.leaf_of(&indicators);
        let leaf_sq = self.second_moment_tree.leaf_of(&indicators);
        leaf_mean * self.second_moment_tree.leaf_means.len() + leaf_sq
    }

    /// Estimated conditional mean of the pseudo-outcome.
    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        self.mean_tree.predict(&self.indicators(x))
    }

    /// Estimated conditional second moment of the pseudo-outcome.
    pub fn predict_second_moment(&self, x: &[f64]) -> f64 {
        self.second_moment_tree.predict(&self.indicators(x))
    }
}

/// Cell-indicator policy: treat exactly the selected cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBasedPolicy {
    pub partition: CellPartition,
    pub selected_cells: BTreeSet<usize>,
}

impl Policy for ModelBasedPolicy {
    fn assign(&self, x: &[f64]) -> f64 {
        f64::from(self.selected_cells.contains(&self.partition.cell_of(x)))
    }
}

impl ModelBasedPolicy {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Result of the model-based pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBasedFit {
    pub policy: ModelBasedPolicy,
    /// `None` when no cell had a positive mean pseudo-outcome; the policy is
    /// then the null policy.
    pub solution: Option<RatioSolution>,
}

/// Full pipeline: pseudo-outcomes → two level-split trees → intersected
/// cells → ratio optimization over cells.
///
/// The centering model must come from a disjoint fold; fold management
/// belongs to the caller.
pub fn fit_model_based_policy(
    data: &TrialDataset,
    centering: &CenteringModel,
    propensity: Propensity,
    sparsity: usize,
    epsilon: f64,
) -> Result<ModelBasedFit> {
    let pseudo = scoring::pseudo_outcomes(data, centering, propensity)?;
    let binarizer = Binarizer::fit(data.covariates());
    let binary = binarizer.apply(data.covariates());
    let mean_tree = fit_level_split_tree(pseudo.pseudo(), &binary, sparsity)?;
    let second_moment_tree = fit_level_split_tree(pseudo.pseudo_sq(), &binary, sparsity)?;
    let partition = CellPartition {
        binarizer,
        mean_tree,
        second_moment_tree,
    };

    let cells: Vec<usize> = data
        .covariates()
        .rows()
        .map(|x| partition.cell_of(x))
        .collect();
    let stats = ratio_opt::CellStatistics::from_assignments(pseudo.pseudo(), &cells)?;
    match ratio_opt::bisection_solve(&stats, epsilon) {
        Ok(solution) => {
            let selected_cells = solution.selected.iter().copied().collect();
            Ok(ModelBasedFit {
                policy: ModelBasedPolicy {
                    partition,
                    selected_cells,
                },
                solution: Some(solution),
            })
        }
        Err(Error::NoPositiveCell) => Ok(ModelBasedFit {
            policy: ModelBasedPolicy {
                partition,
                selected_cells: BTreeSet::new(),
            },
            solution: None,
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centering::{fit_centering, CenteringKind, CenteringParams};
    use crate::dataset::{generate_three_region, ThreeRegionDgpConfig};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn binary_matrix(rows: Vec<Vec<u8>>) -> Matrix {
        Matrix::from_vec_of_rows(
            rows.into_iter()
                .map(|r| r.into_iter().map(f64::from).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn informative_binary_feature_is_selected_with_exact_leaf_means() {
        // labels depend on x0 only
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let x0 = u8::from(i % 2 == 0);
            let x1 = u8::from(i % 4 < 2);
            rows.push(vec![x0, x1]);
            labels.push(if x0 == 1 { 3.0 } else { -1.0 });
        }
        let m = binary_matrix(rows);
        let tree = fit_level_split_tree(&labels, &m, 1).unwrap();
        assert_eq!(tree.level_features, vec![0]);
        assert_abs_diff_eq!(tree.leaf_means[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(tree.leaf_means[1], 3.0, epsilon = 1e-12);
        assert!(!tree.stopped_early);
    }

    #[test]
    fn constant_labels_split_lowest_index_with_constant_means() {
        let rows: Vec<Vec<u8>> = (0..20).map(|i| vec![i % 2, (i / 2) % 2]).collect();
        let m = binary_matrix(rows);
        let labels = vec![7.5; 20];
        let tree = fit_level_split_tree(&labels, &m, 2).unwrap();
        assert_eq!(tree.level_features, vec![0, 1]);
        for &mean in &tree.leaf_means {
            assert_abs_diff_eq!(mean, 7.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn engineered_gap_selects_relevant_feature_every_run() {
        // labels = a·(2x0−1) + b·(2x1−1) + noise with a² − b² = 0.5: the
        // level-0 V-gain of x0 beats x1 by that margin.
        let a: f64 = 0.8;
        let b: f64 = (a * a - 0.5).sqrt();
        let n = 5000;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let x0 = u8::from(rng.gen_bool(0.5));
                let x1 = u8::from(rng.gen_bool(0.5));
                rows.push(vec![x0, x1]);
                labels.push(
                    a * (2.0 * f64::from(x0) - 1.0)
                        + b * (2.0 * f64::from(x1) - 1.0)
                        + rng.gen_range(-0.5..0.5),
                );
            }
            let m = binary_matrix(rows);
            let tree = fit_level_split_tree(&labels, &m, 1).unwrap();
            assert_eq!(tree.level_features, vec![0], "seed {seed}");
        }
    }

    #[test]
    fn depth_beyond_feature_count_stops_early_with_flag() {
        let rows: Vec<Vec<u8>> = (0..10).map(|i| vec![i % 2]).collect();
        let m = binary_matrix(rows);
        let labels: Vec<f64> = (0..10).map(f64::from).collect();
        let tree = fit_level_split_tree(&labels, &m, 3).unwrap();
        assert!(tree.stopped_early);
        assert_eq!(tree.depth(), 1);
    }

    #[test]
    fn binarizer_handles_binary_constant_and_continuous_features() {
        let m = Matrix::from_vec_of_rows(vec![
            vec![0.0, 5.0, 0.1],
            vec![1.0, 5.0, 0.9],
            vec![1.0, 5.0, 0.4],
            vec![0.0, 5.0, 0.6],
        ])
        .unwrap();
        let bin = Binarizer::fit(&m);
        // 0/1 feature passes through.
        assert!(!bin.indicator(&[0.0, 0.0, 0.0], 0));
        assert!(bin.indicator(&[1.0, 0.0, 0.0], 0));
        // Constant feature: indicator always false.
        assert!(!bin.indicator(&[0.0, 5.0, 0.0], 1));
        // Continuous feature: median split (median = 0.5).
        assert!(bin.indicator(&[0.0, 0.0, 0.7], 2));
        assert!(!bin.indicator(&[0.0, 0.0, 0.3], 2));
    }

    #[test]
    fn rows_in_one_cell_share_both_leaves() {
        let config = ThreeRegionDgpConfig::default();
        let data = generate_three_region(&config, 500, 3).unwrap();
        let centering = CenteringModel::constant_zero();
        let fit =
            fit_model_based_policy(&data, &centering, Propensity::Empirical, 2, 1e-3).unwrap();
        let part = &fit.policy.partition;
        let mut by_cell: std::collections::HashMap<usize, (usize, usize)> = Default::default();
        for x in data.covariates().rows() {
            let indicators: Vec<bool> = (0..x.len())
                .map(|j| part.binarizer.indicator(x, j))
                .collect();
            let leaves = (
                part.mean_tree.leaf_of(&indicators),
                part.second_moment_tree.leaf_of(&indicators),
            );
            let cell = part.cell_of(x);
            let entry = by_cell.entry(cell).or_insert(leaves);
            assert_eq!(*entry, leaves);
        }
    }

    #[test]
    fn sparsity_zero_is_all_or_nothing_by_sign_of_mean() {
        let config = ThreeRegionDgpConfig::default();
        let data = generate_three_region(&config, 400, 17).unwrap();
        let centering = CenteringModel::constant_zero();
        let fit =
            fit_model_based_policy(&data, &centering, Propensity::Empirical, 0, 1e-3).unwrap();
        let pseudo = scoring::pseudo_outcomes(&data, &centering, Propensity::Empirical).unwrap();
        let mean: f64 = pseudo.pseudo().iter().sum::<f64>() / data.n_rows() as f64;
        let mask = fit.policy.assign_all(data.covariates());
        if mean > 0.0 {
            assert!(mask.iter().all(|&a| a == 1.0));
            assert!(fit.solution.is_some());
        } else {
            assert!(mask.iter().all(|&a| a == 0.0));
            assert!(fit.solution.is_none());
        }
    }

    /// Region-indicator encoding of the three-region process, split into a
    /// centering fold and a learning fold the way the runner wires honesty.
    fn region_indicator_data(n: usize, seed: u64) -> (TrialDataset, TrialDataset) {
        let config = ThreeRegionDgpConfig::default();
        let raw = generate_three_region(&config, 2 * n, seed).unwrap();
        // Encode each row by region indicators [1{x>=1}, 1{x>=2}].
        let rows: Vec<Vec<f64>> = raw
            .covariates()
            .rows()
            .map(|x| vec![f64::from(x[0] >= 1.0), f64::from(x[0] >= 2.0)])
            .collect();
        let encoded = TrialDataset::new(
            Matrix::from_vec_of_rows(rows).unwrap(),
            raw.treatment().to_vec(),
            raw.outcome().to_vec(),
        )
        .unwrap();
        let first: Vec<usize> = (0..n).collect();
        let second: Vec<usize> = (n..2 * n).collect();
        (
            encoded.select_rows(&first).unwrap(),
            encoded.select_rows(&second).unwrap(),
        )
    }

    #[test]
    fn selected_cells_exclude_null_effect_region() {
        let runs = 100;
        let mut exclusions = 0;
        for seed in 0..runs {
            let (centering_fold, learning_fold) = region_indicator_data(2000, 600 + seed);
            let centering = fit_centering(
                &centering_fold,
                CenteringKind::RegressionTree,
                0.5,
                &CenteringParams {
                    max_depth: 3,
                    min_leaf: 5,
                    ..CenteringParams::default()
                },
                seed,
            )
            .unwrap();
            let fit = fit_model_based_policy(
                &learning_fold,
                &centering,
                Propensity::Empirical,
                2,
                1e-3,
            )
            .unwrap();
            // Region [0,1] encodes as (0,0).
            if fit.policy.assign(&[0.0, 0.0]) == 0.0 {
                exclusions += 1;
            }
        }
        assert!(
            exclusions >= 90,
            "region [0,1] excluded in only {exclusions}/{runs} runs"
        );
    }

    #[test]
    fn ratio_solution_on_cells_matches_brute_force() {
        for seed in 0..20 {
            let (centering_fold, learning_fold) = region_indicator_data(800, 80 + seed);
            let centering = fit_centering(
                &centering_fold,
                CenteringKind::RegressionTree,
                0.5,
                &CenteringParams::default(),
                seed,
            )
            .unwrap();
            let fit = fit_model_based_policy(
                &learning_fold,
                &centering,
                Propensity::Empirical,
                2,
                0.01,
            )
            .unwrap();
            let Some(solution) = fit.solution else {
                continue;
            };
            let pseudo =
                scoring::pseudo_outcomes(&learning_fold, &centering, Propensity::Empirical)
                    .unwrap();
            let cells: Vec<usize> = learning_fold
                .covariates()
                .rows()
                .map(|x| fit.policy.partition.cell_of(x))
                .collect();
            let stats =
                ratio_opt::CellStatistics::from_assignments(pseudo.pseudo(), &cells).unwrap();
            let brute = ratio_opt::brute_force_best(&stats).unwrap();
            assert!(
                solution.objective >= brute.objective / 1.01 - 1e-12,
                "seed {seed}: {} vs {}",
                solution.objective,
                brute.objective
            );
        }
    }

    #[test]
    fn partition_predictions_recover_group_moments() {
        // τ depends on x0, the noise scale on x1: the fitted trees must
        // reproduce the group-level conditional mean and second moment of
        // the pseudo-outcome (c = 0, p = 1/2: E[Ỹ|g] = τ_g,
        // E[Ỹ²|g] = 4σ_g² + 2τ_g²).
        let n = 60_000;
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut rows = Vec::with_capacity(n);
        let mut ws = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..3).map(|_| f64::from(rng.gen_bool(0.5))).collect();
            let tau = if x[0] > 0.5 { 2.0 } else { -1.0 };
            let sd = if x[1] > 0.5 { 3.0 } else { 0.5 };
            let w = u8::from(rng.gen_bool(0.5));
            let noise: f64 = rng.sample(rand_distr::StandardNormal);
            let y = f64::from(w) * tau + sd * noise;
            rows.push(x);
            ws.push(w);
            ys.push(y);
        }
        let data = TrialDataset::new(Matrix::from_vec_of_rows(rows).unwrap(), ws, ys).unwrap();
        let fit = fit_model_based_policy(
            &data,
            &CenteringModel::constant_zero(),
            Propensity::Known(0.5),
            2,
            1e-3,
        )
        .unwrap();
        for (x0, x1) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            let tau = if x0 > 0.5 { 2.0 } else { -1.0 };
            let sd: f64 = if x1 > 0.5 { 3.0 } else { 0.5 };
            let probe = [x0, x1, 0.0];
            let mean = fit.policy.partition.predict_mean(&probe);
            let second = fit.policy.partition.predict_second_moment(&probe);
            // Sampling error of the group means at n/4 rows per group.
            assert!((mean - tau).abs() < 0.15, "mean {mean} vs τ {tau}");
            let expected_second = 4.0 * sd * sd + 2.0 * tau * tau;
            assert!(
                (second - expected_second).abs() < 0.1 * expected_second,
                "second moment {second} vs {expected_second}"
            );
        }
    }

    #[test]
    fn policy_json_round_trip() {
        let (_, learning_fold) = region_indicator_data(400, 5);
        let fit = fit_model_based_policy(
            &learning_fold,
            &CenteringModel::constant_zero(),
            Propensity::Empirical,
            2,
            1e-3,
        )
        .unwrap();
        let reloaded = ModelBasedPolicy::from_json(&fit.policy.to_json()).unwrap();
        assert_eq!(fit.policy, reloaded);
    }

    #[test]
    fn approximate_partition_assignments_lose_bounded_value() {
        // Finite-population analogue: points with near-constant (τ, ς²)
        // within groups. The best group-constant assignment must come within
        // (2k/ς̲)(1+κ̄)·ε of the unconstrained optimum.
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        for _ in 0..200 {
            let k = rng.gen_range(2..4usize);
            let points_per_group = 3usize;
            let total_points = k * points_per_group;
            let base_tau: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.5)).collect();
            let base_var: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..3.0)).collect();
            let eps_scale = rng.gen_range(0.0..0.05);

            let mut mass = vec![0.0; total_points];
            let mut tau = vec![0.0; total_points];
            let mut var = vec![0.0; total_points];
            for g in 0..k {
                for j in 0..points_per_group {
                    let idx = g * points_per_group + j;
                    mass[idx] = 1.0 / total_points as f64;
                    tau[idx] = base_tau[g] + rng.gen_range(-eps_scale..eps_scale);
                    var[idx] = (base_var[g] + rng.gen_range(-eps_scale..eps_scale)).max(0.1);
                }
            }
            let z = |mask: u32| -> f64 {
                let mut num = 0.0;
                let mut den = 0.0;
                for i in 0..total_points {
                    if mask >> i & 1 == 1 {
                        num += mass[i] * tau[i];
                        den += mass[i] * var[i];
                    }
                }
                if den == 0.0 {
                    0.0
                } else {
                    num / den.sqrt()
                }
            };
            let z_star = (0..(1u32 << total_points)).map(z).fold(f64::MIN, f64::max);
            let z_const = (0..(1u32 << k))
                .map(|gmask| {
                    let mut mask = 0u32;
                    for g in 0..k {
                        if gmask >> g & 1 == 1 {
                            for j in 0..points_per_group {
                                mask |= 1 << (g * points_per_group + j);
                            }
                        }
                    }
                    z(mask)
                })
                .fold(f64::MIN, f64::max);

            // Deviation measure and constants of the bound.
            let group_mass = points_per_group as f64 / total_points as f64;
            let mut eps = 0.0f64;
            let mut min_var = f64::INFINITY;
            let mut max_kappa = 0.0f64;
            for g in 0..k {
                let idx = |j: usize| g * points_per_group + j;
                let g_tau: f64 = (0..points_per_group).map(|j| tau[idx(j)]).sum::<f64>()
                    / points_per_group as f64;
                let g_var: f64 = (0..points_per_group).map(|j| var[idx(j)]).sum::<f64>()
                    / points_per_group as f64;
                for j1 in 0..points_per_group {
                    for j2 in 0..points_per_group {
                        eps = eps
                            .max(group_mass.sqrt() * (tau[idx(j1)] - tau[idx(j2)]).abs())
                            .max(group_mass.sqrt() * (var[idx(j1)] - var[idx(j2)]).abs());
                    }
                }
                min_var = min_var.min(g_var);
                max_kappa = max_kappa.max(g_tau / g_var);
            }
            let bound = 2.0 * k as f64 / min_var.sqrt() * (1.0 + max_kappa) * eps;
            assert!(
                z_const >= z_star - bound - 1e-12,
                "constant {z_const} vs optimal {z_star}, bound {bound}"
            );
        }
    }
}
