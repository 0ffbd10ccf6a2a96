//! Fit an evidence tree on synthetic trial data and test it out of sample.
//! Mirrors the walkthrough in the workspace README.

use evidence_policy::centering::{fit_centering, CenteringKind, CenteringParams};
use evidence_policy::dataset::{generate_three_region, ThreeRegionDgpConfig};
use evidence_policy::scoring::{holdout_test, pseudo_outcomes, Propensity};
use evidence_policy::tree_policy::{fit_evidence_tree, TreePolicyParams};

fn main() -> Result<(), evidence_policy::Error> {
    let config = ThreeRegionDgpConfig::default();
    let train = generate_three_region(&config, 2000, 1)?;
    let holdout = generate_three_region(&config, 2000, 2)?;

    let centering = fit_centering(
        &train,
        CenteringKind::RegressionForest,
        0.5,
        &CenteringParams::default(),
        7,
    )?;
    let pseudo = pseudo_outcomes(&train, &centering, Propensity::Empirical)?;
    let tree = fit_evidence_tree(&pseudo, train.covariates(), &TreePolicyParams::default())?;
    let result = holdout_test(&tree, &centering, &holdout, 0.05, Propensity::Empirical)?;
    println!("out-of-sample p = {:.2e}", result.p_value);
    Ok(())
}
