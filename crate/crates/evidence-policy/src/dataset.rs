//! Trial data containers, synthetic data-generating processes, and CSV I/O.
//!
//! All generators are pure functions of `(config, seed)` backed by ChaCha8,
//! so identical inputs reproduce identical datasets on any platform.

use std::io::Write;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result};

/// Rows of (covariates, binary treatment, outcome) from a randomized trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDataset {
    covariates: Matrix,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
}

impl TrialDataset {
    /// Validates the row-count, binary-treatment, and finiteness invariants.
    pub fn new(covariates: Matrix, treatment: Vec<u8>, outcome: Vec<f64>) -> Result<Self> {
        let n = covariates.n_rows();
        if n == 0 {
            return Err(Error::InvalidConfig("dataset must have n >= 1 rows".into()));
        }
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::InvalidConfig(format!(
                "row count mismatch: covariates {}, treatment {}, outcome {}",
                n,
                treatment.len(),
                outcome.len()
            )));
        }
        if let Some(i) = treatment.iter().position(|&w| w > 1) {
            return Err(Error::InvalidConfig(format!(
                "treatment must be 0 or 1; row {} has {}",
                i, treatment[i]
            )));
        }
        if let Some(i) = outcome.iter().position(|y| !y.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "outcome must be finite; row {} is {}",
                i, outcome[i]
            )));
        }
        if covariates.rows().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("covariates must be finite".into()));
        }
        Ok(Self {
            covariates,
            treatment,
            outcome,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_features(&self) -> usize {
        self.covariates.n_cols()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    /// Fraction of treated rows.
    pub fn treated_fraction(&self) -> f64 {
        self.treatment.iter().map(|&w| f64::from(w)).sum::<f64>() / self.n_rows() as f64
    }

    /// New dataset holding the given row indices, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        TrialDataset::new(
            self.covariates.select_rows(indices),
            indices.iter().map(|&i| self.treatment[i]).collect(),
            indices.iter().map(|&i| self.outcome[i]).collect(),
        )
    }

    /// Dataset with the treatment indicator flipped on the given rows.
    pub(crate) fn with_flipped_treatment(&self, flip: &[bool]) -> Self {
        let treatment = self
            .treatment
            .iter()
            .zip(flip)
            .map(|(&w, &f)| if f { 1 - w } else { w })
            .collect();
        Self {
            covariates: self.covariates.clone(),
            treatment,
            outcome: self.outcome.clone(),
        }
    }
}

/// Scalar covariate X ~ U[0,3] split into the regions [0,1), [1,2), [2,3],
/// each with its own treatment effect, baseline, and noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeRegionDgpConfig {
    pub region_effects: [f64; 3],
    pub region_baselines: [f64; 3],
    pub region_noise_sd: [f64; 3],
    pub treat_probability: f64,
}

impl Default for ThreeRegionDgpConfig {
    fn default() -> Self {
        Self {
            region_effects: [0.0, 2.0, 1.0],
            region_baselines: [0.0, 10.0, 100.0],
            region_noise_sd: [5.0, 10.0, 1.0],
            treat_probability: 0.5,
        }
    }
}

impl ThreeRegionDgpConfig {
    fn validate(&self) -> Result<()> {
        if self.region_noise_sd.iter().any(|&s| s < 0.0) {
            return Err(Error::InvalidConfig("region_noise_sd must be >= 0".into()));
        }
        if !(self.treat_probability > 0.0 && self.treat_probability < 1.0) {
            return Err(Error::InvalidConfig(
                "treat_probability must lie in (0,1)".into(),
            ));
        }
        Ok(())
    }
}

/// Draw `n` rows with X ~ U[0,3], W ~ Bernoulli(p), and
/// Y = W·τ_t + β_t + N(0, σ_t²) where t = floor(X) clamped to {0,1,2}.
pub fn generate_three_region(
    config: &ThreeRegionDgpConfig,
    n: usize,
    seed: u64,
) -> Result<TrialDataset> {
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("n must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coin = Bernoulli::new(config.treat_probability)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut xs = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.gen_range(0.0..3.0);
        let region = (x.floor() as usize).min(2);
        let w = u8::from(coin.sample(&mut rng));
        let noise = draw_normal(&mut rng, config.region_noise_sd[region]);
        let y = f64::from(w) * config.region_effects[region]
            + config.region_baselines[region]
            + noise;
        xs.push(x);
        ws.push(w);
        ys.push(y);
    }
    TrialDataset::new(Matrix::from_column(xs), ws, ys)
}

/// Group-structure process: i.i.d. U[0,1] covariates stand in for trial
/// covariates; three feature indices are drawn at random and thresholded at
/// their empirical medians. Effect, baseline, and noise are indicator sums of
/// the `group_*` vectors over those three thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStructureDgpConfig {
    pub group_effects: [f64; 3],
    pub group_noise_sd: [f64; 3],
    pub group_baselines: [f64; 3],
    pub feature_count: usize,
    pub sample_count: usize,
}

impl Default for GroupStructureDgpConfig {
    fn default() -> Self {
        Self {
            group_effects: [-2.0, 2.0, 2.0],
            group_noise_sd: [5.0, 10.0, 1.0],
            group_baselines: [0.0, 10.0, 100.0],
            feature_count: 44,
            sample_count: 2000,
        }
    }
}

/// Per-row effect, baseline, and noise sd given the group indicator pattern.
fn group_row_params(
    x: &[f64],
    indices: &[usize; 3],
    thresholds: &[f64; 3],
    config: &GroupStructureDgpConfig,
) -> (f64, f64, f64) {
    let mut tau = 0.0;
    let mut baseline = 0.0;
    let mut sd = 0.0;
    for t in 0..3 {
        if x[indices[t]] > thresholds[t] {
            tau += config.group_effects[t];
            baseline += config.group_baselines[t];
            sd += config.group_noise_sd[t];
        }
    }
    (tau, baseline, sd)
}

/// Empirical median with the average-of-middle-two convention for even n, so
/// the `> median` indicator splits the sample into halves of size within 1.
pub(crate) fn empirical_median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn generate_group_structure(
    config: &GroupStructureDgpConfig,
    seed: u64,
) -> Result<TrialDataset> {
    if config.feature_count < 3 {
        return Err(Error::InvalidConfig(
            "group structure requires feature_count >= 3".into(),
        ));
    }
    if config.sample_count == 0 {
        return Err(Error::InvalidConfig("sample_count must be >= 1".into()));
    }
    if config.group_noise_sd.iter().any(|&s| s < 0.0) {
        return Err(Error::InvalidConfig("group_noise_sd must be >= 0".into()));
    }
    let n = config.sample_count;
    let p = config.feature_count;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut data = vec![0.0; n * p];
    for v in data.iter_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    let covariates = Matrix::from_rows(data, n, p)?;

    let picked = rand::seq::index::sample(&mut rng, p, 3).into_vec();
    let indices = [picked[0], picked[1], picked[2]];
    let thresholds = [
        empirical_median(&covariates.column(indices[0])),
        empirical_median(&covariates.column(indices[1])),
        empirical_median(&covariates.column(indices[2])),
    ];

    let coin = Bernoulli::new(0.5).expect("p=0.5");
    let mut ws = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let (tau, baseline, sd) = group_row_params(covariates.row(i), &indices, &thresholds, config);
        let w = u8::from(coin.sample(&mut rng));
        let y = tau * f64::from(w) + baseline + draw_normal(&mut rng, sd);
        ws.push(w);
        ys.push(y);
    }
    TrialDataset::new(covariates, ws, ys)
}

/// Finite-cell process with local-to-zero effects: the covariate is the cell
/// index, cell masses are exactly equal, and the effect in cell x is
/// μ_x / √n with n = cell_count · samples_per_cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDgpConfig {
    pub cell_count: usize,
    pub cell_effects: Vec<f64>,
    pub cell_noise_sd: Vec<f64>,
    pub samples_per_cell: usize,
}

impl Default for CellDgpConfig {
    fn default() -> Self {
        Self {
            cell_count: 3,
            cell_effects: vec![5.0, 5.0, 5.0],
            cell_noise_sd: vec![0.01, 0.01, 100.0],
            samples_per_cell: 1000,
        }
    }
}

impl CellDgpConfig {
    fn validate(&self) -> Result<()> {
        if self.cell_count == 0 || self.samples_per_cell == 0 {
            return Err(Error::InvalidConfig(
                "cell_count and samples_per_cell must be >= 1".into(),
            ));
        }
        if self.cell_effects.len() != self.cell_count || self.cell_noise_sd.len() != self.cell_count
        {
            return Err(Error::InvalidConfig(
                "cell_effects and cell_noise_sd must have cell_count entries".into(),
            ));
        }
        if self.cell_noise_sd.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidConfig("cell_noise_sd must be > 0".into()));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.cell_count * self.samples_per_cell
    }

    /// Realized effect for one cell: μ_x / √n.
    pub fn effect_in_cell(&self, cell: usize) -> f64 {
        self.cell_effects[cell] / (self.total_samples() as f64).sqrt()
    }
}

pub fn generate_cell_dgp(config: &CellDgpConfig, seed: u64) -> Result<TrialDataset> {
    config.validate()?;
    let n = config.total_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coin = Bernoulli::new(0.5).expect("p=0.5");
    let mut xs = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for cell in 0..config.cell_count {
        let tau = config.effect_in_cell(cell);
        for _ in 0..config.samples_per_cell {
            let w = u8::from(coin.sample(&mut rng));
            let y = f64::from(w) * tau + draw_normal(&mut rng, config.cell_noise_sd[cell]);
            xs.push(cell as f64);
            ws.push(w);
            ys.push(y);
        }
    }
    TrialDataset::new(Matrix::from_column(xs), ws, ys)
}

fn draw_normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).expect("sd >= 0").sample(rng)
}

/// Load a trial dataset from CSV. The header must contain one column named
/// `w` and one named `y`; every other column is a feature, order preserved.
pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<TrialDataset> {
    let mut reader = csv::Reader::from_path(path.as_ref())
        .map_err(|e| Error::Csv(format!("{}: {e}", path.as_ref().display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let w_col = headers
        .iter()
        .position(|h| h == "w")
        .ok_or_else(|| Error::Csv("missing required column `w`".into()))?;
    let y_col = headers
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| Error::Csv("missing required column `y`".into()))?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&j| j != w_col && j != y_col)
        .collect();

    let mut rows = Vec::new();
    let mut ws = Vec::new();
    let mut ys = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let parse = |col: usize| -> Result<f64> {
            record
                .get(col)
                .ok_or_else(|| Error::Csv(format!("row {}: missing column {}", idx + 1, col)))?
                .trim()
                .parse::<f64>()
                .map_err(|_| {
                    Error::Csv(format!(
                        "row {}, column `{}`: non-numeric value `{}`",
                        idx + 1,
                        headers[col],
                        record.get(col).unwrap_or("")
                    ))
                })
        };
        let w = parse(w_col)?;
        if w != 0.0 && w != 1.0 {
            return Err(Error::Csv(format!(
                "row {}, column `w`: value {} outside {{0,1}}",
                idx + 1,
                w
            )));
        }
        ws.push(w as u8);
        ys.push(parse(y_col)?);
        let mut row = Vec::with_capacity(feature_cols.len());
        for &col in &feature_cols {
            row.push(parse(col)?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Csv("file contains no data rows".into()));
    }
    TrialDataset::new(Matrix::from_vec_of_rows(rows)?, ws, ys)
}

/// Write a dataset as CSV with header `x1,...,xp,w,y`. Floats use the
/// shortest round-trip representation, so load-after-save is bit-exact.
pub fn save_csv<P: AsRef<Path>>(data: &TrialDataset, path: P) -> Result<()> {
    let mut out = std::fs::File::create(path.as_ref())?;
    let header: Vec<String> = (1..=data.n_features())
        .map(|j| format!("x{j}"))
        .chain(["w".to_string(), "y".to_string()])
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.n_rows() {
        let mut fields: Vec<String> = data.covariates().row(i).iter().map(f64::to_string).collect();
        fields.push(data.treatment()[i].to_string());
        fields.push(data.outcome()[i].to_string());
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}
