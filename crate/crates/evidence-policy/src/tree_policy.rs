//! Greedy policy trees driven by the global t-statistic, plus the relaxed
//! tree that maximizes the sum of leaf-wise squared t-ratios.
//!
//! The binary tree grows breadth-first. For every node it samples candidate
//! thresholds per feature, tries both child-treatment configurations, and
//! accepts a candidate only when the t-statistic of the *whole* assignment
//! vector improves by at least `min_score_increase`. The denominator of the
//! statistic is a global property, so candidates are scored on the full
//! sample, never node-locally; the running best updates immediately, so a
//! later candidate within the same node must beat the earlier winner.

use std::collections::VecDeque;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::policy::Policy;
use crate::scoring::PseudoOutcomeTable;
use crate::{Error, Matrix, Result};

/// Tuning knobs shared by the binary and relaxed trees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreePolicyParams {
    /// Minimum score improvement ε_min for accepting a split.
    pub min_score_increase: f64,
    pub max_depth: usize,
    /// Children with at most this many samples are rejected.
    pub min_leaf: usize,
    /// Candidate thresholds sampled per feature at each node; capped at
    /// node size − 1 and at the number of distinct values.
    pub mtry: usize,
    pub seed: u64,
}

impl Default for TreePolicyParams {
    fn default() -> Self {
        Self {
            min_score_increase: 1e-6,
            max_depth: 4,
            min_leaf: 20,
            mtry: 10,
            seed: 0,
        }
    }
}

/// One node of a fitted policy tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub feature: Option<usize>,
    pub threshold: Option<f64>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    /// Treatment assignment; authoritative at leaves.
    pub assignment: u8,
    pub depth: usize,
}

impl TreeNode {
    fn leaf(id: usize, depth: usize, assignment: u8) -> Self {
        Self {
            id,
            feature: None,
            threshold: None,
            left: None,
            right: None,
            assignment,
            depth,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.left.is_none()
    }
}

/// A fitted binary evidence tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    pub depth: usize,
    /// Training t-statistic of the final assignment. 0 for the all-zero
    /// assignment by the null-policy convention; `None` when the training
    /// pseudo-outcomes were completely degenerate (zero variance).
    pub final_t_statistic: Option<f64>,
    /// All pseudo-outcomes equal: the root assignment comes from the sign of
    /// their mean and no split can be scored.
    pub degenerate_root: bool,
    /// Accepted score values in order; strictly increasing by at least
    /// ε_min per acceptance.
    pub score_path: Vec<f64>,
}

impl PolicyTree {
    fn leaf_for(&self, x: &[f64]) -> &TreeNode {
        let mut node = &self.nodes[self.root];
        while let (Some(feature), Some(threshold)) = (node.feature, node.threshold) {
            node = if x[feature] < threshold {
                &self.nodes[node.left.expect("split has left child")]
            } else {
                &self.nodes[node.right.expect("split has right child")]
            };
        }
        node
    }

    /// Node id of the leaf a covariate row routes to.
    pub fn leaf_id(&self, x: &[f64]) -> usize {
        self.leaf_for(x).id
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl Policy for PolicyTree {
    fn assign(&self, x: &[f64]) -> f64 {
        f64::from(self.leaf_for(x).assignment)
    }
}

/// Running mean/variance state of the masked pseudo-outcome sums.
struct GlobalScore {
    n: f64,
    s1: f64,
    s2: f64,
}

impl GlobalScore {
    /// √n·AVG/STD from the sums; `None` when the variance is degenerate.
    fn t(&self) -> Option<f64> {
        let mean = self.s1 / self.n;
        let ss = self.s2 - self.s1 * self.s1 / self.n;
        if ss <= 0.0 {
            return None;
        }
        let var = ss / (self.n - 1.0);
        Some(self.n.sqrt() * mean / var.sqrt())
    }
}

/// Candidate thresholds for one feature: a sample (without replacement) of
/// the node's distinct feature values.
fn sample_thresholds(
    covariates: &Matrix,
    rows: &[usize],
    feature: usize,
    mtry: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut values: Vec<f64> = rows.iter().map(|&i| covariates.get(i, feature)).collect();
    values.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
    values.dedup();
    let take = mtry.min(values.len()).min(rows.len().saturating_sub(1));
    if take == 0 {
        return Vec::new();
    }
    rand::seq::index::sample(rng, values.len(), take)
        .into_iter()
        .map(|k| values[k])
        .collect()
}

/// Fit the evidence tree on training pseudo-outcomes.
pub fn fit_evidence_tree(
    pseudo: &PseudoOutcomeTable,
    covariates: &Matrix,
    params: &TreePolicyParams,
) -> Result<PolicyTree> {
    let n = pseudo.len();
    if n != covariates.n_rows() {
        return Err(Error::InvalidConfig(format!(
            "pseudo-outcome table ({n}) and covariates ({}) disagree on rows",
            covariates.n_rows()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidConfig("tree fitting needs n >= 2".into()));
    }
    let y = pseudo.pseudo();
    let y_sq = pseudo.pseudo_sq();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // Root statistic over the all-ones assignment.
    let root_score = GlobalScore {
        n: n as f64,
        s1: y.iter().sum(),
        s2: y_sq.iter().sum(),
    };
    let (mut z_star, root_assignment, degenerate_root) = match root_score.t() {
        Some(z0) if z0 >= 0.0 => (z0, 1u8, false),
        Some(_) => (0.0, 0u8, false),
        // Zero variance: assign by the sign of the mean; no candidate can
        // ever be scored against ±∞, so the tree stays a stump.
        None => (f64::INFINITY, u8::from(root_score.s1 >= 0.0), true),
    };

    let mut mask: Vec<u8> = vec![root_assignment; n];
    let mut s1: f64 = if root_assignment == 1 { root_score.s1 } else { 0.0 };
    let mut s2: f64 = if root_assignment == 1 { root_score.s2 } else { 0.0 };

    let mut nodes = vec![TreeNode::leaf(0, 0, root_assignment)];
    let mut queue = VecDeque::from([(0usize, (0..n).collect::<Vec<usize>>())]);
    let mut score_path = Vec::new();

    while let Some((node_id, rows)) = queue.pop_front() {
        let depth = nodes[node_id].depth;
        if depth >= params.max_depth {
            continue;
        }

        struct Accepted {
            feature: usize,
            threshold: f64,
            treat_left: bool,
        }
        let mut accepted: Option<Accepted> = None;

        // Masked sums restricted to this node's rows; refreshed on acceptance.
        let mut node_masked_s1: f64 = rows.iter().map(|&i| f64::from(mask[i]) * y[i]).sum();
        let mut node_masked_s2: f64 = rows.iter().map(|&i| f64::from(mask[i]) * y_sq[i]).sum();
        let node_s1: f64 = rows.iter().map(|&i| y[i]).sum();
        let node_s2: f64 = rows.iter().map(|&i| y_sq[i]).sum();

        for feature in 0..covariates.n_cols() {
            for threshold in sample_thresholds(covariates, &rows, feature, params.mtry, &mut rng) {
                let mut left_count = 0usize;
                let mut left_s1 = 0.0;
                let mut left_s2 = 0.0;
                for &i in &rows {
                    if covariates.get(i, feature) < threshold {
                        left_count += 1;
                        left_s1 += y[i];
                        left_s2 += y_sq[i];
                    }
                }
                let right_count = rows.len() - left_count;
                if left_count <= params.min_leaf || right_count <= params.min_leaf {
                    continue;
                }
                for treat_left in [true, false] {
                    let (c_s1, c_s2) = if treat_left {
                        (left_s1, left_s2)
                    } else {
                        (node_s1 - left_s1, node_s2 - left_s2)
                    };
                    let candidate = GlobalScore {
                        n: n as f64,
                        s1: s1 - node_masked_s1 + c_s1,
                        s2: s2 - node_masked_s2 + c_s2,
                    };
                    // A degenerate candidate statistic rejects the candidate.
                    let Some(z) = candidate.t() else { continue };
                    if z >= z_star + params.min_score_increase {
                        z_star = z;
                        score_path.push(z);
                        for &i in &rows {
                            let in_c = (covariates.get(i, feature) < threshold) == treat_left;
                            mask[i] = u8::from(in_c);
                        }
                        s1 = candidate.s1;
                        s2 = candidate.s2;
                        node_masked_s1 = c_s1;
                        node_masked_s2 = c_s2;
                        accepted = Some(Accepted {
                            feature,
                            threshold,
                            treat_left,
                        });
                    }
                }
            }
        }

        if let Some(split) = accepted {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                .into_iter()
                .partition(|&i| covariates.get(i, split.feature) < split.threshold);
            let left_id = nodes.len();
            let right_id = nodes.len() + 1;
            nodes.push(TreeNode::leaf(left_id, depth + 1, u8::from(split.treat_left)));
            nodes.push(TreeNode::leaf(right_id, depth + 1, u8::from(!split.treat_left)));
            let node = &mut nodes[node_id];
            node.feature = Some(split.feature);
            node.threshold = Some(split.threshold);
            node.left = Some(left_id);
            node.right = Some(right_id);
            queue.push_back((left_id, left_rows));
            queue.push_back((right_id, right_rows));
        }
    }

    let depth = nodes.iter().map(|nd| nd.depth).max().unwrap_or(0);
    Ok(PolicyTree {
        nodes,
        root: 0,
        depth,
        final_t_statistic: if degenerate_root { None } else { Some(z_star) },
        degenerate_root,
        score_path,
    })
}

/// One leaf of a relaxed tree with its probabilistic assignment weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedNode {
    pub id: usize,
    pub feature: Option<usize>,
    pub threshold: Option<f64>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    /// Assignment weight in [0,1]; authoritative at leaves.
    pub weight: f64,
    pub depth: usize,
    /// Leaf mean of the pseudo-outcomes.
    pub leaf_mean: f64,
    /// Squared standard error of the leaf mean.
    pub leaf_se_sq: f64,
}

/// Tree of probabilistic assignments with leaf weights ∝ τ̂_ℓ / σ̂²_ℓ,
/// clipped at zero and renormalized so the largest weight is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedTree {
    pub nodes: Vec<RelaxedNode>,
    pub root: usize,
    pub depth: usize,
    /// Fitted value of Σ_ℓ τ̂²_ℓ / σ̂²_ℓ over the final partition.
    pub criterion_value: f64,
    /// Some leaf had zero variance and its σ̂² was floored.
    pub variance_floored: bool,
}

impl RelaxedTree {
    fn leaf_for(&self, x: &[f64]) -> &RelaxedNode {
        let mut node = &self.nodes[self.root];
        while let (Some(feature), Some(threshold)) = (node.feature, node.threshold) {
            node = if x[feature] < threshold {
                &self.nodes[node.left.expect("split has left child")]
            } else {
                &self.nodes[node.right.expect("split has right child")]
            };
        }
        node
    }

    /// Leaf statistics (mean, se², weight) for every current leaf.
    pub fn leaves(&self) -> impl Iterator<Item = &RelaxedNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }
}

impl RelaxedNode {
    fn is_leaf(&self) -> bool {
        self.left.is_none()
    }
}

impl Policy for RelaxedTree {
    fn assign(&self, x: &[f64]) -> f64 {
        self.leaf_for(x).weight
    }
}

/// Knobs specific to the relaxed tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxedTreeParams {
    pub tree: TreePolicyParams,
    /// Floor applied to a zero squared standard error.
    pub variance_floor: f64,
}

impl Default for RelaxedTreeParams {
    fn default() -> Self {
        Self {
            tree: TreePolicyParams::default(),
            variance_floor: 1e-12,
        }
    }
}

struct LeafStats {
    mean: f64,
    se_sq: f64,
    floored: bool,
}

fn leaf_stats(y: &[f64], rows: &[usize], floor: f64) -> LeafStats {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
    let ss: f64 = rows.iter().map(|&i| (y[i] - mean) * (y[i] - mean)).sum();
    let var = if rows.len() > 1 { ss / (n - 1.0) } else { 0.0 };
    let se_sq = var / n;
    if se_sq > 0.0 {
        LeafStats {
            mean,
            se_sq,
            floored: false,
        }
    } else {
        LeafStats {
            mean,
            se_sq: floor,
            floored: true,
        }
    }
}

fn leaf_contribution(stats: &LeafStats) -> f64 {
    stats.mean * stats.mean / stats.se_sq
}

/// Fit the relaxed tree: greedy recursive splits accepted when they increase
/// Σ_ℓ τ̂²_ℓ/σ̂²_ℓ by at least ε_min.
pub fn fit_relaxed_tree(
    pseudo: &PseudoOutcomeTable,
    covariates: &Matrix,
    params: &RelaxedTreeParams,
) -> Result<RelaxedTree> {
    let n = pseudo.len();
    if n != covariates.n_rows() {
        return Err(Error::InvalidConfig(format!(
            "pseudo-outcome table ({n}) and covariates ({}) disagree on rows",
            covariates.n_rows()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidConfig("tree fitting needs n >= 2".into()));
    }
    let y = pseudo.pseudo();
    let tp = &params.tree;
    let mut rng = ChaCha8Rng::seed_from_u64(tp.seed);

    let floored = std::cell::Cell::new(false);
    let make_node = |id: usize, depth: usize, rows: &[usize]| -> RelaxedNode {
        let stats = leaf_stats(y, rows, params.variance_floor);
        if stats.floored {
            floored.set(true);
        }
        RelaxedNode {
            id,
            feature: None,
            threshold: None,
            left: None,
            right: None,
            weight: 0.0,
            depth,
            leaf_mean: stats.mean,
            leaf_se_sq: stats.se_sq,
        }
    };

    let all_rows: Vec<usize> = (0..n).collect();
    let mut nodes = vec![make_node(0, 0, &all_rows)];
    let mut queue = VecDeque::from([(0usize, all_rows)]);

    while let Some((node_id, rows)) = queue.pop_front() {
        let depth = nodes[node_id].depth;
        if depth >= tp.max_depth {
            continue;
        }
        let parent = leaf_stats(y, &rows, params.variance_floor);
        let parent_score = leaf_contribution(&parent);

        struct Best {
            gain: f64,
            feature: usize,
            threshold: f64,
        }
        let mut best: Option<Best> = None;
        for feature in 0..covariates.n_cols() {
            for threshold in sample_thresholds(covariates, &rows, feature, tp.mtry, &mut rng) {
                let left: Vec<usize> = rows
                    .iter()
                    .copied()
                    .filter(|&i| covariates.get(i, feature) < threshold)
                    .collect();
                let n_left = left.len();
                let n_right = rows.len() - n_left;
                if n_left <= tp.min_leaf.max(1) || n_right <= tp.min_leaf.max(1) {
                    continue;
                }
                let right: Vec<usize> = rows
                    .iter()
                    .copied()
                    .filter(|&i| covariates.get(i, feature) >= threshold)
                    .collect();
                let gain = leaf_contribution(&leaf_stats(y, &left, params.variance_floor))
                    + leaf_contribution(&leaf_stats(y, &right, params.variance_floor))
                    - parent_score;
                if gain >= tp.min_score_increase
                    && gain > best.as_ref().map_or(f64::NEG_INFINITY, |b| b.gain)
                {
                    best = Some(Best {
                        gain,
                        feature,
                        threshold,
                    });
                }
            }
        }

        if let Some(best) = best {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                .into_iter()
                .partition(|&i| covariates.get(i, best.feature) < best.threshold);
            let left_id = nodes.len();
            let right_id = nodes.len() + 1;
            let left_node = make_node(left_id, depth + 1, &left_rows);
            let right_node = make_node(right_id, depth + 1, &right_rows);
            nodes.push(left_node);
            nodes.push(right_node);
            let node = &mut nodes[node_id];
            node.feature = Some(best.feature);
            node.threshold = Some(best.threshold);
            node.left = Some(left_id);
            node.right = Some(right_id);
            queue.push_back((left_id, left_rows));
            queue.push_back((right_id, right_rows));
        }
    }

    // Leaf weights ∝ max(τ̂, 0)/σ̂², rescaled to max 1.
    let mut criterion_value = 0.0;
    let mut raw: Vec<(usize, f64)> = Vec::new();
    for node in &nodes {
        if node.is_leaf() {
            criterion_value += node.leaf_mean * node.leaf_mean / node.leaf_se_sq;
            let w = (node.leaf_mean.max(0.0)) / node.leaf_se_sq;
            raw.push((node.id, w));
        }
    }
    let max_w = raw.iter().map(|&(_, w)| w).fold(0.0, f64::max);
    for (id, w) in raw {
        nodes[id].weight = if max_w > 0.0 { w / max_w } else { 0.0 };
    }

    let depth = nodes.iter().map(|nd| nd.depth).max().unwrap_or(0);
    Ok(RelaxedTree {
        nodes,
        root: 0,
        depth,
        criterion_value,
        variance_floored: floored.get(),
    })
}
