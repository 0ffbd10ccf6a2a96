//! Baseline policies the evidence-based learners are compared against:
//! treat-all, cost-sensitive classification trees on signed pseudo-outcome
//! labels, and CATE thresholding via a simplified R-learner.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cart::{self, ResidualProductLoss, TreeConfig, WeightedGini, WeightedSquaredError};
use crate::centering::{fit_centering, CenteringKind, CenteringParams};
use crate::dataset::TrialDataset;
use crate::policy::{ConstantPolicy, Policy};
use crate::scoring::{self, Propensity};
use crate::stats;
use crate::{Error, Result};

/// The benchmark method labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    /// Treat everyone.
    All,
    /// Weighted classification tree on sign(μᵢ) with c = mean(y).
    Classifier,
    /// Same with the fitted optimal centering.
    ClassifierRes,
    /// R-learner CATE tree thresholded at zero, modeled propensity.
    Cate,
    /// Same with the constant trial propensity.
    CateConst,
    /// Evidence tree without centering (c ≡ 0).
    Evidence,
    /// Evidence tree on optimally centered pseudo-outcomes.
    EvidenceRes,
    /// Evidence-tree leaves re-assigned by the cell-subset optimizer.
    PolicySubmod,
    /// The model-based pipeline (level-split trees + cell selection).
    Submod,
}

impl BenchmarkKind {
    pub fn label(&self) -> &'static str {
        match self {
            BenchmarkKind::All => "all",
            BenchmarkKind::Classifier => "classifier",
            BenchmarkKind::ClassifierRes => "classifier_res",
            BenchmarkKind::Cate => "cate",
            BenchmarkKind::CateConst => "cate_const",
            BenchmarkKind::Evidence => "evidence",
            BenchmarkKind::EvidenceRes => "evidence_res",
            BenchmarkKind::PolicySubmod => "policy_submod",
            BenchmarkKind::Submod => "submod",
        }
    }

    pub const ALL_KINDS: [BenchmarkKind; 9] = [
        BenchmarkKind::All,
        BenchmarkKind::Classifier,
        BenchmarkKind::ClassifierRes,
        BenchmarkKind::Cate,
        BenchmarkKind::CateConst,
        BenchmarkKind::Evidence,
        BenchmarkKind::EvidenceRes,
        BenchmarkKind::PolicySubmod,
        BenchmarkKind::Submod,
    ];
}

impl std::fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for BenchmarkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkKind::ALL_KINDS
            .iter()
            .find(|k| k.label() == s)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// The constant treat-everyone policy.
pub fn fit_all() -> ConstantPolicy {
    ConstantPolicy(1.0)
}

/// Depth and leaf-size knobs for the benchmark trees, mirroring the evidence
/// tree's settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for BenchmarkTreeParams {
    fn default() -> Self {
        Self {
            max_depth: 4,
            min_leaf: 20,
        }
    }
}

/// Which centering the classifier benchmark uses for its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassifierCentering {
    /// c(x) = mean of the outcomes.
    Mean,
    /// A fitted optimal-centering model.
    Optimal {
        kind: CenteringKind,
        params: CenteringParams,
    },
}

/// A classification-tree policy: treat the predicted-positive leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTreePolicy {
    tree: cart::FittedTree,
}

impl Policy for ClassifierTreePolicy {
    fn assign(&self, x: &[f64]) -> f64 {
        self.tree.predict_row(x)
    }
}

/// Weighted classification on the signed pseudo-outcomes: labels sign(μᵢ),
/// sample weights |μᵢ|, Gini impurity.
pub fn fit_classifier(
    data: &TrialDataset,
    centering: &ClassifierCentering,
    tree_params: &BenchmarkTreeParams,
    propensity: Propensity,
    seed: u64,
) -> Result<ClassifierTreePolicy> {
    if data.n_rows() < 2 {
        return Err(Error::InvalidConfig("classifier needs n >= 2".into()));
    }
    let p = propensity.resolve(data)?;
    let model = match centering {
        ClassifierCentering::Mean => fit_centering(
            data,
            CenteringKind::ConstantMean,
            p,
            &CenteringParams::default(),
            seed,
        )?,
        ClassifierCentering::Optimal { kind, params } => {
            fit_centering(data, *kind, p, params, seed)?
        }
    };
    let mu = scoring::pseudo_outcomes(data, &model, propensity)?;
    let labels: Vec<bool> = mu.pseudo().iter().map(|&v| v > 0.0).collect();
    let weights: Vec<f64> = mu.pseudo().iter().map(|&v| v.abs()).collect();
    let criterion = WeightedGini {
        labels: &labels,
        weights: &weights,
    };
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = cart::fit_tree(
        &criterion,
        data.covariates(),
        &rows,
        &TreeConfig {
            max_depth: tree_params.max_depth,
            min_leaf: tree_params.min_leaf,
            mtry: None,
        },
        &mut rng,
    );
    Ok(ClassifierTreePolicy { tree })
}

/// R-learner configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CateParams {
    pub tree: BenchmarkTreeParams,
    /// Nuisance forest size/shape.
    pub forest: CenteringParams,
    /// Cross-fitting folds for the nuisance models.
    pub folds: usize,
}

impl Default for CateParams {
    fn default() -> Self {
        Self {
            tree: BenchmarkTreeParams::default(),
            forest: CenteringParams::default(),
            folds: 2,
        }
    }
}

/// A CATE-tree policy: treat where the fitted leaf effect is nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateTreePolicy {
    tree: cart::FittedTree,
}

impl CateTreePolicy {
    /// The leaf-constant effect estimate at a covariate row.
    pub fn effect(&self, x: &[f64]) -> f64 {
        self.tree.predict_row(x)
    }
}

impl Policy for CateTreePolicy {
    fn assign(&self, x: &[f64]) -> f64 {
        f64::from(self.tree.predict_row(x) >= 0.0)
    }
}

/// Simplified R-learner: cross-fit forest residualization of the outcome
/// (and of the treatment unless the constant trial propensity is used),
/// then a single regression tree minimizing the residual-on-residual loss
/// Σ((Yᵢ−m̂(Xᵢ)) − τ(Xᵢ)(Wᵢ−p̂(Xᵢ)))² over leaf-constant effects.
pub fn fit_cate(
    data: &TrialDataset,
    use_constant_propensity: bool,
    params: &CateParams,
    seed: u64,
) -> Result<CateTreePolicy> {
    let n = data.n_rows();
    if n < 4 {
        return Err(Error::InvalidConfig("cate needs n >= 4".into()));
    }
    let folds = params.folds.max(2).min(n / 2);

    // Fold assignment by shuffled index.
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stats::derive_seed(seed, 0, "cate-folds"));
    order.shuffle(&mut rng);
    let mut fold_of = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }

    let outcome_hat = cross_fit_forest(data, data.outcome(), &fold_of, folds, &params.forest, seed)?;
    let treatment: Vec<f64> = data.treatment().iter().map(|&w| f64::from(w)).collect();
    let propensity_hat: Vec<f64> = if use_constant_propensity {
        let p = Propensity::Empirical.resolve(data)?;
        vec![p; n]
    } else {
        let prop_seed = stats::derive_seed(seed, 1, "cate-propensity");
        cross_fit_forest(data, &treatment, &fold_of, folds, &params.forest, prop_seed)?
    };

    let outcome_residuals: Vec<f64> = data
        .outcome()
        .iter()
        .zip(&outcome_hat)
        .map(|(y, m)| y - m)
        .collect();
    let treatment_residuals: Vec<f64> = treatment
        .iter()
        .zip(&propensity_hat)
        .map(|(w, p)| w - p)
        .collect();
    if treatment_residuals.iter().map(|r| r * r).sum::<f64>() == 0.0 {
        return Err(Error::InvalidConfig(
            "degenerate design: residual treatment variance is zero".into(),
        ));
    }

    let criterion = ResidualProductLoss {
        outcome_residuals: &outcome_residuals,
        treatment_residuals: &treatment_residuals,
    };
    let rows: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stats::derive_seed(seed, 0, "cate-tree"));
    let tree = cart::fit_tree(
        &criterion,
        data.covariates(),
        &rows,
        &TreeConfig {
            max_depth: params.tree.max_depth,
            min_leaf: params.tree.min_leaf,
            mtry: None,
        },
        &mut rng,
    );
    Ok(CateTreePolicy { tree })
}

/// Out-of-fold forest predictions of `targets` on the covariates.
fn cross_fit_forest(
    data: &TrialDataset,
    targets: &[f64],
    fold_of: &[usize],
    folds: usize,
    forest: &CenteringParams,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = data.n_rows();
    let unit = vec![1.0; n];
    let mut predictions = vec![0.0; n];
    for fold in 0..folds {
        let train_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        if train_rows.is_empty() {
            return Err(Error::InvalidConfig("cross-fitting fold is empty".into()));
        }
        let criterion = WeightedSquaredError {
            targets,
            weights: &unit,
        };
        let fitted = fit_forest_on_rows(
            &criterion,
            data,
            &train_rows,
            forest,
            stats::derive_seed(seed, fold as u64, "cate-nuisance"),
        );
        for i in (0..n).filter(|&i| fold_of[i] == fold) {
            predictions[i] = fitted.predict_row(data.covariates().row(i));
        }
    }
    Ok(predictions)
}

fn fit_forest_on_rows(
    criterion: &WeightedSquaredError<'_>,
    data: &TrialDataset,
    rows: &[usize],
    forest: &CenteringParams,
    seed: u64,
) -> cart::FittedForest {
    let config = TreeConfig {
        max_depth: forest.max_depth,
        min_leaf: forest.min_leaf,
        mtry: Some(((data.n_features() as f64).sqrt().ceil() as usize).max(1)),
    };
    let trees = (0..forest.n_trees)
        .map(|t| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(stats::derive_seed(seed, t as u64, "forest-tree"));
            let boot: Vec<usize> = (0..rows.len())
                .map(|_| rows[rng.gen_range(0..rows.len())])
                .collect();
            cart::fit_tree(criterion, data.covariates(), &boot, &config, &mut rng)
        })
        .collect();
    cart::FittedForest { trees }
}
