//! Command-line front end: run replication experiments, generate synthetic
//! trial data, and run the two-learner comparison.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on runtime
//! failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use evidence_policy::dataset::{
    generate_cell_dgp, generate_group_structure, generate_three_region, save_csv, CellDgpConfig,
    GroupStructureDgpConfig, ThreeRegionDgpConfig,
};
use evidence_policy::experiments::{
    emit_report, run_experiment, run_prop2_comparison, ExperimentConfig, ReportFormat,
    TwoLearnerConfig,
};

#[derive(Parser)]
#[command(
    name = "evidence-policy",
    about = "Treatment-assignment policy learning targeted at out-of-sample test power"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DgpKind {
    ThreeRegion,
    Group,
    Cell,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replication experiment from a JSON config.
    Run {
        /// Path to the experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output report path.
        #[arg(long)]
        out: PathBuf,
        /// Report format.
        #[arg(long, value_enum, default_value = "csv")]
        format: OutputFormat,
        /// Worker threads for replications (0 = rayon default).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Generate a synthetic trial dataset as CSV.
    GenData {
        /// Which generating process to draw from.
        #[arg(long, value_enum)]
        dgp: DgpKind,
        /// DGP parameters: inline JSON or a path to a JSON file. Omit for
        /// the documented defaults.
        #[arg(long)]
        params: Option<String>,
        /// Sample size (for `cell`, must be divisible by cell_count).
        #[arg(long)]
        n: usize,
        /// RNG seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the per-cell sign rule against the cell-subset optimizer.
    Prop2 {
        /// Comparison parameters: inline JSON or a path to a JSON file.
        /// Omit for the extreme-variance default configuration.
        #[arg(long)]
        params: Option<String>,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Accept either inline JSON or a path to a JSON file.
fn read_params(raw: &str) -> Result<String, CliError> {
    let trimmed = raw.trim_start();
    if trimmed.starts_with('{') {
        return Ok(raw.to_string());
    }
    std::fs::read_to_string(raw)
        .map_err(|e| CliError::Config(format!("cannot read params file `{raw}`: {e}")))
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid {what}: {e}")))
}

fn classify(e: evidence_policy::Error) -> CliError {
    match e {
        evidence_policy::Error::InvalidConfig(_) | evidence_policy::Error::Csv(_) => {
            config_err(e)
        }
        other => runtime_err(other),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            out,
            format,
            threads,
        } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", config.display())))?;
            let config: ExperimentConfig = parse_json(&text, "experiment config")?;
            if threads > 0 {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global()
                    .map_err(runtime_err)?;
            }
            let report = run_experiment(&config).map_err(classify)?;
            let format = match format {
                OutputFormat::Csv => ReportFormat::Csv,
                OutputFormat::Json => ReportFormat::Json,
            };
            emit_report(&report, format, &out).map_err(runtime_err)?;
            println!("wrote {}", out.display());
            for aggregate in &report.aggregates {
                println!(
                    "{:>16}: median p = {}, discovery rate = {:.4}, failures = {}",
                    aggregate.method.label(),
                    aggregate
                        .median_p
                        .map_or("n/a".to_string(), |v| format!("{v:.4e}")),
                    aggregate.discovery_rate,
                    aggregate.failures,
                );
            }
            Ok(())
        }
        Command::GenData {
            dgp,
            params,
            n,
            seed,
            out,
        } => {
            if n == 0 {
                return Err(CliError::Config("--n must be >= 1".into()));
            }
            let params_text = params.as_deref().map(read_params).transpose()?;
            let data = match dgp {
                DgpKind::ThreeRegion => {
                    let config: ThreeRegionDgpConfig = match &params_text {
                        Some(text) => parse_json(text, "three-region params")?,
                        None => ThreeRegionDgpConfig::default(),
                    };
                    generate_three_region(&config, n, seed).map_err(classify)?
                }
                DgpKind::Group => {
                    let mut config: GroupStructureDgpConfig = match &params_text {
                        Some(text) => parse_json(text, "group params")?,
                        None => GroupStructureDgpConfig::default(),
                    };
                    config.sample_count = n;
                    generate_group_structure(&config, seed).map_err(classify)?
                }
                DgpKind::Cell => {
                    let mut config: CellDgpConfig = match &params_text {
                        Some(text) => parse_json(text, "cell params")?,
                        None => CellDgpConfig::default(),
                    };
                    if n % config.cell_count != 0 {
                        return Err(CliError::Config(format!(
                            "--n {n} is not divisible by cell_count {}",
                            config.cell_count
                        )));
                    }
                    config.samples_per_cell = n / config.cell_count;
                    generate_cell_dgp(&config, seed).map_err(classify)?
                }
            };
            save_csv(&data, &out).map_err(runtime_err)?;
            println!(
                "wrote {} ({} rows, {} features)",
                out.display(),
                data.n_rows(),
                data.n_features()
            );
            Ok(())
        }
        Command::Prop2 { params, out } => {
            let config: TwoLearnerConfig = match params.as_deref().map(read_params).transpose()? {
                Some(text) => parse_json(&text, "prop2 params")?,
                None => TwoLearnerConfig {
                    cell: CellDgpConfig::default(),
                    replications: 500,
                    alpha: 0.05,
                    seed: 0,
                    ratio_epsilon: 1e-3,
                },
            };
            let report = run_prop2_comparison(&config).map_err(classify)?;
            let text = serde_json::to_string_pretty(&report).map_err(runtime_err)?;
            std::fs::write(&out, text).map_err(runtime_err)?;
            println!(
                "wrote {} (sign rule {:.3}, subset optimizer {:.3})",
                out.display(),
                report.sign_rule_rejection_rate,
                report.ratio_opt_rejection_rate
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
