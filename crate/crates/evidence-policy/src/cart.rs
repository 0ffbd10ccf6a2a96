//! Minimal greedy binary-tree machinery shared by the centering regressors
//! and the benchmark learners.
//!
//! A criterion exposes per-row sufficient statistics (`Acc`), a sum-scale
//! impurity, and a leaf value. Splits are scanned exhaustively per feature
//! with midpoint thresholds; rows route left when  x[feature] < threshold.
//! Ties break toward the lowest feature index, then the lowest threshold.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::Matrix;

pub(crate) trait Criterion {
    type Acc: Copy + Default
        + std::ops::Add<Output = Self::Acc>
        + std::ops::Sub<Output = Self::Acc>;

    fn moments(&self, row: usize) -> Self::Acc;
    /// Sum-scale impurity; lower is better. Must be >= 0 up to rounding.
    fn loss(&self, acc: &Self::Acc) -> f64;
    fn leaf_value(&self, acc: &Self::Acc) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct WeightedMoments {
    pub w: f64,
    pub wy: f64,
    pub wyy: f64,
}

impl std::ops::Add for WeightedMoments {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            w: self.w + o.w,
            wy: self.wy + o.wy,
            wyy: self.wyy + o.wyy,
        }
    }
}

impl std::ops::Sub for WeightedMoments {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            w: self.w - o.w,
            wy: self.wy - o.wy,
            wyy: self.wyy - o.wyy,
        }
    }
}

/// Weighted squared-error regression: leaf value is the weighted mean.
pub(crate) struct WeightedSquaredError<'a> {
    pub targets: &'a [f64],
    pub weights: &'a [f64],
}

impl Criterion for WeightedSquaredError<'_> {
    type Acc = WeightedMoments;

    fn moments(&self, row: usize) -> WeightedMoments {
        let w = self.weights[row];
        let y = self.targets[row];
        WeightedMoments {
            w,
            wy: w * y,
            wyy: w * y * y,
        }
    }

    fn loss(&self, acc: &WeightedMoments) -> f64 {
        if acc.w <= 0.0 {
            0.0
        } else {
            acc.wyy - acc.wy * acc.wy / acc.w
        }
    }

    fn leaf_value(&self, acc: &WeightedMoments) -> f64 {
        if acc.w <= 0.0 {
            0.0
        } else {
            acc.wy / acc.w
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct GiniMoments {
    pub w_pos: f64,
    pub w_neg: f64,
}

impl std::ops::Add for GiniMoments {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            w_pos: self.w_pos + o.w_pos,
            w_neg: self.w_neg + o.w_neg,
        }
    }
}

impl std::ops::Sub for GiniMoments {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            w_pos: self.w_pos - o.w_pos,
            w_neg: self.w_neg - o.w_neg,
        }
    }
}

/// Weighted Gini impurity for binary labels; leaf value is 1.0 when the
/// positive class carries strictly more weight.
pub(crate) struct WeightedGini<'a> {
    pub labels: &'a [bool],
    pub weights: &'a [f64],
}

impl Criterion for WeightedGini<'_> {
    type Acc = GiniMoments;

    fn moments(&self, row: usize) -> GiniMoments {
        let w = self.weights[row];
        if self.labels[row] {
            GiniMoments { w_pos: w, w_neg: 0.0 }
        } else {
            GiniMoments { w_pos: 0.0, w_neg: w }
        }
    }

    fn loss(&self, acc: &GiniMoments) -> f64 {
        let total = acc.w_pos + acc.w_neg;
        if total <= 0.0 {
            0.0
        } else {
            // total * gini = total - (pos^2 + neg^2) / total
            total - (acc.w_pos * acc.w_pos + acc.w_neg * acc.w_neg) / total
        }
    }

    fn leaf_value(&self, acc: &GiniMoments) -> f64 {
        if acc.w_pos > acc.w_neg {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ResidualMoments {
    pub s_ww: f64,
    pub s_wy: f64,
    pub s_yy: f64,
}

impl std::ops::Add for ResidualMoments {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            s_ww: self.s_ww + o.s_ww,
            s_wy: self.s_wy + o.s_wy,
            s_yy: self.s_yy + o.s_yy,
        }
    }
}

impl std::ops::Sub for ResidualMoments {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            s_ww: self.s_ww - o.s_ww,
            s_wy: self.s_wy - o.s_wy,
            s_yy: self.s_yy - o.s_yy,
        }
    }
}

/// Residual-on-residual loss Σ (r_y − τ r_w)² with the leaf-constant
/// minimizer τ = Σ r_y r_w / Σ r_w².
pub(crate) struct ResidualProductLoss<'a> {
    pub outcome_residuals: &'a [f64],
    pub treatment_residuals: &'a [f64],
}

impl Criterion for ResidualProductLoss<'_> {
    type Acc = ResidualMoments;

    fn moments(&self, row: usize) -> ResidualMoments {
        let ry = self.outcome_residuals[row];
        let rw = self.treatment_residuals[row];
        ResidualMoments {
            s_ww: rw * rw,
            s_wy: ry * rw,
            s_yy: ry * ry,
        }
    }

    fn loss(&self, acc: &ResidualMoments) -> f64 {
        if acc.s_ww <= 0.0 {
            acc.s_yy
        } else {
            acc.s_yy - acc.s_wy * acc.s_wy / acc.s_ww
        }
    }

    fn leaf_value(&self, acc: &ResidualMoments) -> f64 {
        if acc.s_ww <= 0.0 {
            0.0
        } else {
            acc.s_wy / acc.s_ww
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub(crate) struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features considered per split; `None` scans all of them.
    pub mtry: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// An arena-backed fitted tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct FittedTree {
    nodes: Vec<Node>,
    pub n_features: usize,
}

impl FittedTree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[feature] < threshold { left } else { right };
                }
                Node::Leaf { value } => return value,
            }
        }
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Fit a tree over the given rows. `rng` is only consulted when `mtry`
/// subsamples features, so unseeded deterministic fits pass `mtry: None`.
pub(crate) fn fit_tree<C: Criterion>(
    criterion: &C,
    covariates: &Matrix,
    rows: &[usize],
    config: &TreeConfig,
    rng: &mut ChaCha8Rng,
) -> FittedTree {
    let mut nodes = Vec::new();
    let moments: Vec<C::Acc> = (0..covariates.n_rows()).map(|i| criterion.moments(i)).collect();
    grow(
        criterion,
        &moments,
        covariates,
        rows.to_vec(),
        0,
        config,
        rng,
        &mut nodes,
    );
    FittedTree {
        nodes,
        n_features: covariates.n_cols(),
    }
}

#[allow(clippy::too_many_arguments)]
fn grow<C: Criterion>(
    criterion: &C,
    moments: &[C::Acc],
    covariates: &Matrix,
    rows: Vec<usize>,
    depth: usize,
    config: &TreeConfig,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    let total = rows
        .iter()
        .fold(C::Acc::default(), |acc, &i| acc + moments[i]);
    let node_id = nodes.len();
    nodes.push(Node::Leaf {
        value: criterion.leaf_value(&total),
    });

    if depth >= config.max_depth || rows.len() < 2 * config.min_leaf {
        return node_id;
    }
    let node_loss = criterion.loss(&total);
    if node_loss <= 0.0 {
        return node_id;
    }

    let p = covariates.n_cols();
    let candidate_features: Vec<usize> = match config.mtry {
        Some(m) if m < p => {
            let mut picked = rand::seq::index::sample(rng, p, m).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..p).collect(),
    };

    let mut best: Option<BestSplit> = None;
    let mut sorted = rows.clone();
    for &feature in &candidate_features {
        sorted.sort_unstable_by(|&a, &b| {
            covariates
                .get(a, feature)
                .partial_cmp(&covariates.get(b, feature))
                .expect("finite covariates")
        });
        let mut left = C::Acc::default();
        for (k, &i) in sorted.iter().enumerate().take(sorted.len() - 1) {
            left = left + moments[i];
            let v = covariates.get(i, feature);
            let v_next = covariates.get(sorted[k + 1], feature);
            if v == v_next {
                continue;
            }
            let n_left = k + 1;
            let n_right = sorted.len() - n_left;
            if n_left < config.min_leaf || n_right < config.min_leaf {
                continue;
            }
            let right = total - left;
            let gain = node_loss - criterion.loss(&left) - criterion.loss(&right);
            if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                best = Some(BestSplit {
                    feature,
                    threshold: 0.5 * (v + v_next),
                    gain,
                });
            }
        }
    }

    let Some(best) = best else {
        return node_id;
    };
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .into_iter()
        .partition(|&i| covariates.get(i, best.feature) < best.threshold);
    let left_id = grow(
        criterion, moments, covariates, left_rows, depth + 1, config, rng, nodes,
    );
    let right_id = grow(
        criterion, moments, covariates, right_rows, depth + 1, config, rng, nodes,
    );
    nodes[node_id] = Node::Split {
        feature: best.feature,
        threshold: best.threshold,
        left: left_id,
        right: right_id,
    };
    node_id
}

/// Bagged forest: bootstrap rows per tree, √p features per split, averaged
/// predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct FittedForest {
    pub trees: Vec<FittedTree>,
}

impl FittedForest {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(x)).sum();
        sum / self.trees.len() as f64
    }
}

pub(crate) fn fit_forest<C: Criterion>(
    criterion: &C,
    covariates: &Matrix,
    n_trees: usize,
    config: &TreeConfig,
    seed: u64,
) -> FittedForest {
    let n = covariates.n_rows();
    let mtry = (covariates.n_cols() as f64).sqrt().ceil() as usize;
    let tree_config = TreeConfig {
        mtry: Some(mtry.max(1)),
        ..*config
    };
    let trees = (0..n_trees)
        .map(|t| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(crate::stats::derive_seed(seed, t as u64, "forest-tree"));
            let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            fit_tree(criterion, covariates, &rows, &tree_config, &mut rng)
        })
        .collect();
    FittedForest { trees }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_weights(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    #[test]
    fn regression_tree_recovers_step_function() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| if x < 0.5 { -1.0 } else { 2.0 }).collect();
        let m = Matrix::from_column(xs);
        let w = unit_weights(40);
        let crit = WeightedSquaredError {
            targets: &ys,
            weights: &w,
        };
        let rows: Vec<usize> = (0..40).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = fit_tree(
            &crit,
            &m,
            &rows,
            &TreeConfig {
                max_depth: 3,
                min_leaf: 1,
                mtry: None,
            },
            &mut rng,
        );
        assert_eq!(tree.predict_row(&[0.2]), -1.0);
        assert_eq!(tree.predict_row(&[0.9]), 2.0);
    }

    #[test]
    fn depth_zero_tree_returns_weighted_mean() {
        let m = Matrix::from_column(vec![0.0, 1.0, 2.0]);
        let ys = [1.0, 2.0, 6.0];
        let w = [1.0, 1.0, 2.0];
        let crit = WeightedSquaredError {
            targets: &ys,
            weights: &w,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = fit_tree(
            &crit,
            &m,
            &[0, 1, 2],
            &TreeConfig {
                max_depth: 0,
                min_leaf: 1,
                mtry: None,
            },
            &mut rng,
        );
        let expected = (1.0 + 2.0 + 12.0) / 4.0;
        assert!((tree.predict_row(&[0.0]) - expected).abs() < 1e-12);
    }

    #[test]
    fn gini_tree_separates_weighted_classes() {
        let m = Matrix::from_column(vec![0.0, 1.0, 2.0, 3.0]);
        let labels = [false, false, true, true];
        let w = [1.0, 1.0, 3.0, 3.0];
        let crit = WeightedGini {
            labels: &labels,
            weights: &w,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = fit_tree(
            &crit,
            &m,
            &[0, 1, 2, 3],
            &TreeConfig {
                max_depth: 2,
                min_leaf: 1,
                mtry: None,
            },
            &mut rng,
        );
        assert_eq!(tree.predict_row(&[0.5]), 0.0);
        assert_eq!(tree.predict_row(&[2.5]), 1.0);
    }

    #[test]
    fn forest_prediction_is_average_of_trees() {
        let xs: Vec<f64> = (0..60).map(|i| (i % 10) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| x * 2.0).collect();
        let m = Matrix::from_column(xs);
        let w = unit_weights(60);
        let crit = WeightedSquaredError {
            targets: &ys,
            weights: &w,
        };
        let forest = fit_forest(
            &crit,
            &m,
            12,
            &TreeConfig {
                max_depth: 4,
                min_leaf: 2,
                mtry: None,
            },
            99,
        );
        let x = [4.0];
        let manual: f64 =
            forest.trees.iter().map(|t| t.predict_row(&x)).sum::<f64>() / forest.trees.len() as f64;
        assert!((forest.predict_row(&x) - manual).abs() < 1e-12);
    }
}
