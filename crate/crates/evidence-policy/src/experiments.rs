//! Replication harness: draws train/hold-out pairs, fits each method with
//! honest fold management where required, evaluates out-of-sample p-values
//! with a shared evaluation centering, and aggregates discovery rates.
//!
//! Seeds derive as hash(seed, replication, stage) so no stage ever shares an
//! RNG stream; all methods inside one replication see the same train and
//! hold-out draws. The hold-out sample never reaches a fitter: learners are
//! handed the training partition only.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{
    self, BenchmarkKind, BenchmarkTreeParams, CateParams, ClassifierCentering,
};
use crate::centering::{fit_centering, CenteringKind, CenteringModel, CenteringParams};
use crate::dataset::{
    self, CellDgpConfig, GroupStructureDgpConfig, ThreeRegionDgpConfig, TrialDataset,
};
use crate::policy::{CellTablePolicy, ConstantPolicy, Policy};
use crate::ratio_opt::{self, CellStatistics};
use crate::scoring::{self, Propensity};
use crate::stats::derive_seed;
use crate::tree_policy::{self, PolicyTree, TreePolicyParams};
use crate::{model_based, Error, Result};

/// Where replication data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpSource {
    ThreeRegion(ThreeRegionDgpConfig),
    Group(GroupStructureDgpConfig),
    /// Cell process; train and hold-out sizes come from the config itself.
    Cell(CellDgpConfig),
    /// A CSV file resampled into train/hold-out splits per replication.
    Csv { path: String },
}

fn default_n() -> usize {
    2000
}
fn default_alpha() -> f64 {
    0.05
}
fn default_discovery() -> f64 {
    1e-3
}
fn default_honest_fraction() -> f64 {
    0.5
}
fn default_sparsity() -> usize {
    2
}
fn default_ratio_epsilon() -> f64 {
    ratio_opt::DEFAULT_EPSILON
}
fn default_rlearner_folds() -> usize {
    2
}
fn default_eval_centering() -> CenteringKind {
    CenteringKind::RegressionForest
}

/// Full configuration of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dgp: DgpSource,
    pub methods: Vec<BenchmarkKind>,
    #[serde(default = "default_n")]
    pub n_train: usize,
    #[serde(default = "default_n")]
    pub n_holdout: usize,
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_discovery")]
    pub discovery_threshold: f64,
    #[serde(default)]
    pub seed: u64,
    /// Evidence-tree knobs; the seed field is ignored (derived per run).
    #[serde(default)]
    pub tree: TreePolicyParams,
    /// Regression hyperparameters shared by centering models and nuisance
    /// forests.
    #[serde(default)]
    pub centering_params: CenteringParams,
    /// Model class of the training-side optimal centering.
    #[serde(default = "default_eval_centering")]
    pub centering_kind: CenteringKind,
    /// Model class of the shared evaluation centering.
    #[serde(default = "default_eval_centering")]
    pub eval_centering_kind: CenteringKind,
    /// Fraction of the training sample given to the centering fold for
    /// methods that require honest centering.
    #[serde(default = "default_honest_fraction")]
    pub honest_fraction: f64,
    /// Level-split depth r of the model-based pipeline.
    #[serde(default = "default_sparsity")]
    pub sparsity: usize,
    #[serde(default = "default_ratio_epsilon")]
    pub ratio_epsilon: f64,
    #[serde(default = "default_rlearner_folds")]
    pub rlearner_folds: usize,
    /// Replace the deterministic p = 1 of null policies with a seeded
    /// uniform draw, modeling a test that was never run. Off by default.
    #[serde(default)]
    pub randomize_null_p: bool,
}

impl ExperimentConfig {
    fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig("alpha must lie in (0,1)".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must be nonempty".into()));
        }
        if !(self.honest_fraction > 0.0 && self.honest_fraction < 1.0) {
            return Err(Error::InvalidConfig(
                "honest_fraction must lie in (0,1)".into(),
            ));
        }
        if matches!(self.dgp, DgpSource::ThreeRegion(_) | DgpSource::Group(_))
            && (self.n_train == 0 || self.n_holdout == 0)
        {
            return Err(Error::InvalidConfig(
                "n_train and n_holdout must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One (method, replication) outcome.
///
/// Failed rows carry the conventional values p = 1, t = 0; the `failed` flag
/// is authoritative and excludes them from every aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: BenchmarkKind,
    pub replication: usize,
    pub p_value: f64,
    pub t_statistic: f64,
    pub estimate: f64,
    pub treated_fraction: f64,
    pub null_policy: bool,
    pub failed: bool,
    #[serde(default)]
    pub error: Option<String>,
}

/// Per-method summary over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: BenchmarkKind,
    /// Median out-of-sample p over non-failed replications; `None` if every
    /// replication failed.
    pub median_p: Option<f64>,
    /// Mean of −log₁₀(p) with p floored at 1e-300; null policies contribute
    /// 0 through their p = 1.
    pub mean_neg_log10_p: Option<f64>,
    /// Fraction of replications with p ≤ the discovery threshold; failed
    /// replications count as non-discoveries.
    pub discovery_rate: f64,
    pub failures: usize,
}

/// Report: raw rows plus recomputable aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub rows: Vec<MethodRow>,
    pub aggregates: Vec<MethodAggregate>,
}

/// Recompute per-method aggregates from raw rows.
pub fn compute_aggregates(
    rows: &[MethodRow],
    methods: &[BenchmarkKind],
    discovery_threshold: f64,
    replications: usize,
) -> Vec<MethodAggregate> {
    methods
        .iter()
        .map(|&method| {
            let mut ps: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method && !r.failed)
                .map(|r| r.p_value)
                .collect();
            ps.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite p"));
            let failures = rows
                .iter()
                .filter(|r| r.method == method && r.failed)
                .count();
            let discoveries = ps.iter().filter(|&&p| p <= discovery_threshold).count();
            let median_p = if ps.is_empty() {
                None
            } else if ps.len() % 2 == 1 {
                Some(ps[ps.len() / 2])
            } else {
                Some(0.5 * (ps[ps.len() / 2 - 1] + ps[ps.len() / 2]))
            };
            let mean_neg_log10_p = if ps.is_empty() {
                None
            } else {
                Some(
                    ps.iter().map(|&p| -p.max(1e-300).log10()).sum::<f64>() / ps.len() as f64,
                )
            };
            MethodAggregate {
                method,
                median_p,
                mean_neg_log10_p,
                discovery_rate: discoveries as f64 / replications as f64,
                failures,
            }
        })
        .collect()
}

fn draw_dataset(
    source: &DgpSource,
    csv_data: Option<&TrialDataset>,
    n: usize,
    seed: u64,
) -> Result<TrialDataset> {
    match source {
        DgpSource::ThreeRegion(cfg) => dataset::generate_three_region(cfg, n, seed),
        DgpSource::Group(cfg) => {
            let cfg = GroupStructureDgpConfig {
                sample_count: n,
                ..cfg.clone()
            };
            dataset::generate_group_structure(&cfg, seed)
        }
        DgpSource::Cell(cfg) => dataset::generate_cell_dgp(cfg, seed),
        DgpSource::Csv { .. } => {
            // handled by the caller via resample_csv
            let _ = csv_data;
            unreachable!("csv draws go through resample_csv")
        }
    }
}

fn resample_csv(
    data: &TrialDataset,
    n_train: usize,
    n_holdout: usize,
    seed: u64,
) -> Result<(TrialDataset, TrialDataset)> {
    if data.n_rows() < n_train + n_holdout {
        return Err(Error::InvalidConfig(format!(
            "csv has {} rows; need n_train + n_holdout = {}",
            data.n_rows(),
            n_train + n_holdout
        )));
    }
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let train = data.select_rows(&order[..n_train])?;
    let holdout = data.select_rows(&order[n_train..n_train + n_holdout])?;
    Ok((train, holdout))
}

/// Split training rows into (centering fold, learning fold).
fn honest_split(
    train: &TrialDataset,
    fraction: f64,
    seed: u64,
) -> Result<(TrialDataset, TrialDataset)> {
    let n = train.n_rows();
    let n_centering = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let centering = train.select_rows(&order[..n_centering])?;
    let learning = train.select_rows(&order[n_centering..])?;
    Ok((centering, learning))
}

/// Evidence-tree leaves re-scored by the cell-subset optimizer.
#[derive(Debug, Clone)]
struct TreeLeafSubsetPolicy {
    tree: PolicyTree,
    selected_leaves: BTreeSet<usize>,
}

impl Policy for TreeLeafSubsetPolicy {
    fn assign(&self, x: &[f64]) -> f64 {
        f64::from(self.selected_leaves.contains(&self.tree.leaf_id(x)))
    }
}

fn fit_method(
    kind: BenchmarkKind,
    train: &TrialDataset,
    config: &ExperimentConfig,
    rep: usize,
) -> Result<Box<dyn Policy>> {
    let seed = derive_seed(config.seed, rep as u64, kind.label());
    let tree_params = TreePolicyParams {
        seed,
        ..config.tree
    };
    let bench_tree = BenchmarkTreeParams {
        max_depth: config.tree.max_depth,
        min_leaf: config.tree.min_leaf,
    };
    match kind {
        BenchmarkKind::All => Ok(Box::new(benchmarks::fit_all())),
        BenchmarkKind::Classifier => Ok(Box::new(benchmarks::fit_classifier(
            train,
            &ClassifierCentering::Mean,
            &bench_tree,
            Propensity::Empirical,
            seed,
        )?)),
        BenchmarkKind::ClassifierRes => Ok(Box::new(benchmarks::fit_classifier(
            train,
            &ClassifierCentering::Optimal {
                kind: config.centering_kind,
                params: config.centering_params,
            },
            &bench_tree,
            Propensity::Empirical,
            seed,
        )?)),
        BenchmarkKind::Cate | BenchmarkKind::CateConst => {
            let params = CateParams {
                tree: bench_tree,
                forest: config.centering_params,
                folds: config.rlearner_folds,
            };
            Ok(Box::new(benchmarks::fit_cate(
                train,
                kind == BenchmarkKind::CateConst,
                &params,
                seed,
            )?))
        }
        BenchmarkKind::Evidence => {
            let pseudo = scoring::pseudo_outcomes(
                train,
                &CenteringModel::constant_zero(),
                Propensity::Empirical,
            )?;
            Ok(Box::new(tree_policy::fit_evidence_tree(
                &pseudo,
                train.covariates(),
                &tree_params,
            )?))
        }
        BenchmarkKind::EvidenceRes | BenchmarkKind::PolicySubmod => {
            let (centering_fold, learning_fold) = honest_split(
                train,
                config.honest_fraction,
                derive_seed(config.seed, rep as u64, "honest-split"),
            )?;
            let p_fold = Propensity::Empirical.resolve(&centering_fold)?;
            let centering = fit_centering(
                &centering_fold,
                config.centering_kind,
                p_fold,
                &config.centering_params,
                derive_seed(seed, 0, "centering"),
            )?;
            let pseudo =
                scoring::pseudo_outcomes(&learning_fold, &centering, Propensity::Empirical)?;
            let tree =
                tree_policy::fit_evidence_tree(&pseudo, learning_fold.covariates(), &tree_params)?;
            if kind == BenchmarkKind::EvidenceRes {
                return Ok(Box::new(tree));
            }
            // Re-assign the tree's leaves with the exact subset optimizer.
            let cells: Vec<usize> = learning_fold
                .covariates()
                .rows()
                .map(|x| tree.leaf_id(x))
                .collect();
            let stats = CellStatistics::from_assignments(pseudo.pseudo(), &cells)?;
            match ratio_opt::bisection_solve(&stats, config.ratio_epsilon) {
                Ok(solution) => Ok(Box::new(TreeLeafSubsetPolicy {
                    tree,
                    selected_leaves: solution.selected.into_iter().collect(),
                })),
                Err(Error::NoPositiveCell) => Ok(Box::new(ConstantPolicy(0.0))),
                Err(e) => Err(e),
            }
        }
        BenchmarkKind::Submod => {
            let (centering_fold, learning_fold) = honest_split(
                train,
                config.honest_fraction,
                derive_seed(config.seed, rep as u64, "honest-split"),
            )?;
            let p_fold = Propensity::Empirical.resolve(&centering_fold)?;
            let centering = fit_centering(
                &centering_fold,
                config.centering_kind,
                p_fold,
                &config.centering_params,
                derive_seed(seed, 0, "centering"),
            )?;
            let fit = model_based::fit_model_based_policy(
                &learning_fold,
                &centering,
                Propensity::Empirical,
                config.sparsity,
                config.ratio_epsilon,
            )?;
            Ok(Box::new(fit.policy))
        }
    }
}

fn run_replication(
    config: &ExperimentConfig,
    csv_data: Option<&TrialDataset>,
    rep: usize,
) -> Vec<MethodRow> {
    let failed_row = |method: BenchmarkKind, message: String| MethodRow {
        method,
        replication: rep,
        p_value: 1.0,
        t_statistic: 0.0,
        estimate: 0.0,
        treated_fraction: 0.0,
        null_policy: false,
        failed: true,
        error: Some(message),
    };

    let drawn = match (&config.dgp, csv_data) {
        (DgpSource::Csv { .. }, Some(data)) => resample_csv(
            data,
            config.n_train,
            config.n_holdout,
            derive_seed(config.seed, rep as u64, "csv-split"),
        ),
        _ => {
            let train = draw_dataset(
                &config.dgp,
                csv_data,
                config.n_train,
                derive_seed(config.seed, rep as u64, "train"),
            );
            let holdout = draw_dataset(
                &config.dgp,
                csv_data,
                config.n_holdout,
                derive_seed(config.seed, rep as u64, "holdout"),
            );
            train.and_then(|t| holdout.map(|h| (t, h)))
        }
    };
    let (train, holdout) = match drawn {
        Ok(pair) => pair,
        Err(e) => {
            return config
                .methods
                .iter()
                .map(|&m| failed_row(m, format!("data draw failed: {e}")))
                .collect();
        }
    };

    // Shared evaluation centering: fitted on the training sample only, so
    // hold-out p-values are comparable across methods.
    let eval_centering = Propensity::Empirical.resolve(&train).and_then(|p| {
        fit_centering(
            &train,
            config.eval_centering_kind,
            p,
            &config.centering_params,
            derive_seed(config.seed, rep as u64, "eval-centering"),
        )
    });
    let eval_centering = match eval_centering {
        Ok(model) => model,
        Err(e) => {
            return config
                .methods
                .iter()
                .map(|&m| failed_row(m, format!("evaluation centering failed: {e}")))
                .collect();
        }
    };

    config
        .methods
        .iter()
        .map(|&method| {
            let outcome = fit_method(method, &train, config, rep).and_then(|policy| {
                let mask = policy.assign_all(holdout.covariates());
                let treated_fraction = mask.iter().sum::<f64>() / mask.len() as f64;
                scoring::holdout_test(
                    &policy,
                    &eval_centering,
                    &holdout,
                    config.alpha,
                    Propensity::Empirical,
                )
                .map(|r| (r, treated_fraction))
            });
            match outcome {
                Ok((result, treated_fraction)) => {
                    let p_value = if result.null_policy && config.randomize_null_p {
                        let stage = format!("null-p-{}", method.label());
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                            config.seed,
                            rep as u64,
                            &stage,
                        ));
                        rng.gen_range(0.0..1.0)
                    } else {
                        result.p_value
                    };
                    MethodRow {
                        method,
                        replication: rep,
                        p_value,
                        t_statistic: result.t_statistic,
                        estimate: result.estimate,
                        treated_fraction,
                        null_policy: result.null_policy,
                        failed: false,
                        error: None,
                    }
                }
                Err(e) => failed_row(method, e.to_string()),
            }
        })
        .collect()
}

/// Run the full experiment. Replications execute in the rayon worker pool;
/// each is pure given its derived seeds, so reports are deterministic.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let csv_data = match &config.dgp {
        DgpSource::Csv { path } => Some(dataset::load_csv(path)?),
        _ => None,
    };
    let rows: Vec<MethodRow> = (0..config.replications)
        .into_par_iter()
        .map(|rep| run_replication(config, csv_data.as_ref(), rep))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let aggregates = compute_aggregates(
        &rows,
        &config.methods,
        config.discovery_threshold,
        config.replications,
    );
    Ok(ExperimentReport {
        config: config.clone(),
        rows,
        aggregates,
    })
}

/// Configuration of the two-learner comparison on the cell process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLearnerConfig {
    pub cell: CellDgpConfig,
    pub replications: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ratio_epsilon")]
    pub ratio_epsilon: f64,
}

/// One replication of the comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLearnerRow {
    pub replication: usize,
    pub sign_rule_p: f64,
    pub sign_rule_rejects: bool,
    pub sign_rule_cells: Vec<usize>,
    pub ratio_opt_p: f64,
    pub ratio_opt_rejects: bool,
    pub ratio_opt_cells: Vec<usize>,
}

/// Report of the two-learner comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLearnerReport {
    pub config: TwoLearnerConfig,
    pub sign_rule_rejection_rate: f64,
    pub ratio_opt_rejection_rate: f64,
    pub rows: Vec<TwoLearnerRow>,
}

/// Compare the naive per-cell sign rule against the exhaustive cell-subset
/// t-ratio maximizer on the cell process: train both on a fresh draw, test
/// both on an independent hold-out draw, report rejection rates.
pub fn run_prop2_comparison(config: &TwoLearnerConfig) -> Result<TwoLearnerReport> {
    if config.replications == 0 {
        return Err(Error::InvalidConfig("replications must be >= 1".into()));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidConfig("alpha must lie in (0,1)".into()));
    }
    let k = config.cell.cell_count;
    let zero = CenteringModel::constant_zero();

    let rows: Vec<TwoLearnerRow> = (0..config.replications)
        .into_par_iter()
        .map(|rep| -> Result<TwoLearnerRow> {
            let train = dataset::generate_cell_dgp(
                &config.cell,
                derive_seed(config.seed, rep as u64, "train"),
            )?;
            let holdout = dataset::generate_cell_dgp(
                &config.cell,
                derive_seed(config.seed, rep as u64, "holdout"),
            )?;
            let pseudo = scoring::pseudo_outcomes(&train, &zero, Propensity::Empirical)?;
            let cells: Vec<usize> = train
                .covariates()
                .rows()
                .map(|x| x[0].round() as usize)
                .collect();
            let stats = CellStatistics::from_assignments(pseudo.pseudo(), &cells)?;

            // Learner (A): treat every cell with positive mean effect.
            let mut sign_weights = vec![0.0; k];
            for (idx, &cell) in stats.cell_ids.iter().enumerate() {
                if stats.w[idx] > 0.0 {
                    sign_weights[cell] = 1.0;
                }
            }
            let sign_cells: Vec<usize> = (0..k).filter(|&c| sign_weights[c] == 1.0).collect();
            let sign_policy = CellTablePolicy {
                weights: sign_weights,
            };

            // Learner (B): exhaustive t-ratio maximization over cell subsets.
            let (ratio_cells, ratio_policy) =
                match ratio_opt::bisection_solve(&stats, config.ratio_epsilon) {
                    Ok(solution) => {
                        let mut weights = vec![0.0; k];
                        for &cell in &solution.selected {
                            weights[cell] = 1.0;
                        }
                        (solution.selected, CellTablePolicy { weights })
                    }
                    Err(Error::NoPositiveCell) => (
                        Vec::new(),
                        CellTablePolicy {
                            weights: vec![0.0; k],
                        },
                    ),
                    Err(e) => return Err(e),
                };

            let sign_result = scoring::holdout_test(
                &sign_policy,
                &zero,
                &holdout,
                config.alpha,
                Propensity::Empirical,
            )?;
            let ratio_result = scoring::holdout_test(
                &ratio_policy,
                &zero,
                &holdout,
                config.alpha,
                Propensity::Empirical,
            )?;
            Ok(TwoLearnerRow {
                replication: rep,
                sign_rule_p: sign_result.p_value,
                sign_rule_rejects: sign_result.passes(config.alpha),
                sign_rule_cells: sign_cells,
                ratio_opt_p: ratio_result.p_value,
                ratio_opt_rejects: ratio_result.passes(config.alpha),
                ratio_opt_cells: ratio_cells,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let reps = config.replications as f64;
    Ok(TwoLearnerReport {
        config: config.clone(),
        sign_rule_rejection_rate: rows.iter().filter(|r| r.sign_rule_rejects).count() as f64 / reps,
        ratio_opt_rejection_rate: rows.iter().filter(|r| r.ratio_opt_rejects).count() as f64 / reps,
        rows,
    })
}

/// Output format of [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

const SUMMARY_MARKER: &str = "#summary";

/// Write a report atomically (temp file + rename).
///
/// CSV layout: one row per (method, replication), a `#summary` marker line,
/// then the per-method aggregate block. JSON carries the full structure.
pub fn emit_report<P: AsRef<Path>>(
    report: &ExperimentReport,
    format: ReportFormat,
    path: P,
) -> Result<()> {
    let text = match format {
        ReportFormat::Json => serde_json::to_string_pretty(report)?,
        ReportFormat::Csv => render_csv(report),
    };
    write_atomically(path.as_ref(), text.as_bytes())
}

pub(crate) fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut out = std::fs::File::create(&tmp)?;
        out.write_all(bytes)?;
        out.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn render_csv(report: &ExperimentReport) -> String {
    let mut out = String::new();
    out.push_str(
        "method,replication,p_value,t_statistic,estimate,treated_fraction,null_policy,failed,error\n",
    );
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.replication,
            r.p_value,
            r.t_statistic,
            r.estimate,
            r.treated_fraction,
            r.null_policy,
            r.failed,
            r.error.as_deref().unwrap_or("").replace(',', ";"),
        ));
    }
    out.push_str(SUMMARY_MARKER);
    out.push('\n');
    out.push_str("method,median_p,mean_neg_log10_p,discovery_rate,failures\n");
    for a in &report.aggregates {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            a.method,
            a.median_p.map_or(String::new(), |v| v.to_string()),
            a.mean_neg_log10_p.map_or(String::new(), |v| v.to_string()),
            a.discovery_rate,
            a.failures,
        ));
    }
    out
}

/// Parse the CSV layout written by [`emit_report`] back into rows.
pub fn parse_csv_rows<P: AsRef<Path>>(path: P) -> Result<Vec<MethodRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            continue; // header
        }
        if line == SUMMARY_MARKER {
            break;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Csv(format!(
                "report line {} has {} fields, expected 9",
                idx + 1,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> Result<f64> {
            if s == "NaN" {
                Ok(f64::NAN)
            } else {
                s.parse::<f64>()
                    .map_err(|_| Error::Csv(format!("bad float `{s}`")))
            }
        };
        rows.push(MethodRow {
            method: fields[0].parse()?,
            replication: fields[1]
                .parse()
                .map_err(|_| Error::Csv(format!("bad replication `{}`", fields[1])))?,
            p_value: parse_f(fields[2])?,
            t_statistic: parse_f(fields[3])?,
            estimate: parse_f(fields[4])?,
            treated_fraction: parse_f(fields[5])?,
            null_policy: fields[6] == "true",
            failed: fields[7] == "true",
            error: if fields[8].is_empty() {
                None
            } else {
                Some(fields[8].to_string())
            },
        });
    }
    Ok(rows)
}
