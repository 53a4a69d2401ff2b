//! The `geomatch` command line. Every subcommand reads and updates the
//! pipeline manifest; failures print one JSON line to stderr.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geomatch::backtest::{
    leave_one_out, simulate, subset_removal, sweep, sweep_grid, write_loo, write_summary, write_sweep, BacktestInputs,
    ComplianceMode, SimulationConfig, SubsetRule,
};
use geomatch::biasaudit::{audit, model_bias_check, write_bias_report};
use geomatch::boosting::{linear_baseline_r_squared, TrainConfig, TuningGrid};
use geomatch::data::io::{read_json, write_json};
use geomatch::data::{GeneratorConfig, LocationId, SelectionMode};
use geomatch::preferences::{MnlConfig, Phi};
use geomatch::recommender::{landing_rank, OutcomeMode, OutcomeOptions, DEFAULT_SPOUSE_RATIO};
use geomatch::{Error, Result};
use serde_json::json;

use crate::api::{router, AppState, ServiceConfig};
use crate::manifest::PipelineManifest;
use crate::pipeline::{self, load_cohort};

#[derive(Debug, Parser)]
#[command(name = "geomatch", version, about = "Location recommendations from per-location earnings models")]
pub struct Cli {
    /// Pipeline manifest; artifacts live in its directory.
    #[arg(long, global = true, env = "GEOMATCH_MANIFEST", default_value = "geomatch-work/manifest.json")]
    pub manifest: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic population with known potential outcomes.
    Generate(GenerateArgs),
    /// Copy an external schema, location table and dataset into the pipeline.
    Ingest(IngestArgs),
    /// Fit the per-location earnings models and the preference model.
    Train(TrainArgs),
    /// Build the prediction matrix for every record.
    Predict(PredictArgs),
    /// Rank of each record's landing location among its predictions.
    Rank(OutArgs),
    /// Run one backtest scenario.
    Simulate(SimulateArgs),
    /// Run a grid of backtest scenarios.
    Sweep(SweepArgs),
    /// Rerun a scenario with each location excluded in turn.
    Loo(SimulateArgs),
    /// Rerun a scenario without a rule-defined subset of locations.
    Subset(SubsetArgs),
    /// Selection-bias audit against the synthetic ground truth.
    Audit(AuditArgs),
    /// Serve predictions and recommendations over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "observables-only")]
    pub selection: SelectionMode,
    #[arg(long, default_value_t = 0)]
    pub noise_features: usize,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub locations: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Root seed for training and backtests.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `desk`, `full`, or a JSON tuning-grid file.
    #[arg(long, default_value = "desk")]
    pub grid: String,
    #[arg(long, default_value_t = 50)]
    pub min_rows: usize,
    /// Upper quantile for capping training outcomes, or `none`.
    #[arg(long, default_value = "0.99")]
    pub outcome_cap: String,
    /// Defaults to the manifest's root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Features for the preference model.
    #[arg(long, value_delimiter = ',')]
    pub preference_features: Option<Vec<String>>,
    /// Also report the one-hot linear baseline's CV R^2.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, default_value = "income")]
    pub outcome_mode: OutcomeMode,
    #[arg(long, default_value_t = DEFAULT_SPOUSE_RATIO)]
    pub spouse_ratio: f64,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output path; defaults to a file in the manifest directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Scenario fields shared by every backtest command; each overrides the
/// `--config` file when given.
#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// JSON scenario file with SimulationConfig fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub compliance_mode: Option<ComplianceMode>,
    #[arg(long)]
    pub z: Option<usize>,
    #[arg(long, alias = "runs")]
    pub n_runs: Option<usize>,
    #[arg(long)]
    pub outcome_mode: Option<OutcomeMode>,
    #[arg(long, value_delimiter = ',')]
    pub excluded_locations: Option<Vec<u32>>,
    /// Defaults to the manifest's root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_cell: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub subgroups: Option<Vec<String>>,
    /// Output directory or file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub pi_max: Option<f64>,
    #[arg(long)]
    pub phi: Option<Phi>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6")]
    pub pi_max: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "5,10,25,none")]
    pub phi: Vec<Phi>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

#[derive(Debug, Clone, ValueEnum)]
pub enum RuleChoice {
    Large,
    LargeAndGrowing,
    Small,
}

#[derive(Debug, Args)]
pub struct SubsetArgs {
    #[arg(long)]
    pub rule: RuleChoice,
    /// Population threshold for the rule.
    #[arg(long, default_value_t = 1_000_000)]
    pub population: u64,
    /// Growth threshold for `large-and-growing`.
    #[arg(long, default_value_t = 0.01)]
    pub min_growth: f64,
    #[command(flatten)]
    pub sim: SimulateArgs,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Features defining the strata.
    #[arg(long, value_delimiter = ',', default_value = "education")]
    pub strata: Vec<String>,
    /// Also compare mean model predictions with the true cell means.
    #[arg(long)]
    pub models: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "GEOMATCH_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    #[arg(long, default_value_t = 20)]
    pub max_sim_runs: usize,
    #[arg(long, default_value_t = 2)]
    pub sim_workers: usize,
    /// Require this bearer token on every route except /health.
    #[arg(long, env = "GEOMATCH_TOKEN")]
    pub token: Option<String>,
}

/// Parse arguments, run, and return the process exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let message = e.kind().to_string();
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or(&message).trim_start_matches("error: ");
            eprintln!("{}", json!({"error": "usage", "message": first}));
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            1
        }
    }
}

fn print(value: serde_json::Value) {
    println!("{value}");
}

pub fn run(cli: Cli) -> Result<()> {
    let path = cli.manifest;
    match cli.command {
        Command::Generate(a) => {
            let mut m = PipelineManifest::open_or_new(&path, a.seed)
                .unwrap_or_else(|_| PipelineManifest::new(parent(&path), a.seed));
            let config = GeneratorConfig {
                n: a.n,
                k: a.k,
                seed: a.seed,
                selection: a.selection,
                noise_features: a.noise_features,
                ..Default::default()
            };
            let data = pipeline::generate(&mut m, &config)?;
            print(json!({"records": data.len(), "locations": data.k(), "manifest": m.manifest_path()}));
        }
        Command::Ingest(a) => {
            let mut m = PipelineManifest::new(parent(&path), a.seed);
            let w = pipeline::ingest(&mut m, &a.schema, &a.locations, &a.dataset)?;
            print(json!({"unknown_levels": w.unknown_levels, "manifest": m.manifest_path()}));
        }
        Command::Train(a) => {
            let mut m = PipelineManifest::load(&path)?;
            let grid = match a.grid.as_str() {
                "desk" => TuningGrid::desk(),
                "full" => TuningGrid::full(),
                file => read_json(Path::new(file))?,
            };
            let outcome_cap_quantile = match a.outcome_cap.as_str() {
                "none" => None,
                q => Some(q.parse::<f64>().map_err(|_| Error::Config(format!("bad --outcome-cap `{q}`")))?),
            };
            let config = TrainConfig { grid, min_rows: a.min_rows, outcome_cap_quantile, seed: a.seed.unwrap_or(m.root_seed) };
            let mut mnl_config = MnlConfig::default();
            if let Some(f) = a.preference_features {
                mnl_config.features = f;
            }
            let out = pipeline::train(&mut m, &config, &mnl_config)?;
            let mut report = json!({
                "models": out.models.models.len(),
                "unmodeled": out.models.unmodeled.keys().collect::<Vec<_>>(),
                "cv_r_squared": out.models.cv_r_squared(),
                "preference_converged": out.mnl.convergence.converged,
                "model_hash": m.hash(crate::manifest::role::MODELSET),
            });
            if a.baseline {
                let data = pipeline::load_dataset_artifact(&m)?;
                report["linear_cv_r_squared"] = json!(linear_baseline_r_squared(&data, &out.models)?);
            }
            print(report);
        }
        Command::Predict(a) => {
            let mut m = PipelineManifest::load(&path)?;
            let options = OutcomeOptions { mode: a.outcome_mode, spouse_ratio: a.spouse_ratio };
            let matrix = pipeline::predict(&mut m, &options)?;
            print(json!({"rows": matrix.n(), "locations": matrix.k(), "outcome_mode": matrix.mode()}));
        }
        Command::Rank(a) => {
            let mut m = PipelineManifest::load(&path)?;
            let data = pipeline::load_dataset_artifact(&m)?;
            let matrix = pipeline::load_matrix_artifact(&m)?;
            let out = a.out.unwrap_or_else(|| m.dir().join("landing_rank.csv"));
            let mut w = csv::Writer::from_path(&out).map_err(Error::from)?;
            w.write_record(["individual_id", "landing", "rank", "k"]).map_err(Error::from)?;
            let mut ranks = Vec::new();
            let mut skipped = 0;
            for (i, r) in data.records.iter().enumerate() {
                match landing_rank(matrix.row(i), r.landing) {
                    Ok(rank) => {
                        w.write_record([r.id.to_string(), r.landing.to_string(), rank.to_string(), matrix.k().to_string()])
                            .map_err(Error::from)?;
                        ranks.push(rank as f64);
                    }
                    Err(Error::UnmodeledLocation(_)) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            w.flush().map_err(|e| Error::io(&out, e))?;
            m.record_output("rank", &out)?;
            m.save()?;
            print(json!({
                "n": ranks.len(),
                "skipped": skipped,
                "mean_rank": geomatch::stats::mean(&ranks),
                "k": matrix.k(),
                "out": out,
            }));
        }
        Command::Simulate(a) => {
            let mut m = PipelineManifest::load(&path)?;
            let config = scenario_config(&m, &a)?;
            let cohort = load_cohort(&m)?;
            let matrix = cohort.matrix_for(&OutcomeOptions::new(config.outcome_mode))?;
            let inputs = BacktestInputs { cohort: &cohort.dataset, matrix: &matrix, rankings: &cohort.rankings };
            let summary = simulate(&inputs, &config)?;
            let dir = a.scenario.out.clone().unwrap_or_else(|| m.dir().join("simulate"));
            write_summary(&dir, &summary)?;
            m.record_output("simulate", &dir.join("summary.json"))?;
            m.save()?;
            print(json!({
                "cohort_gain": summary.cohort_gain.mean,
                "complier_gain": summary.complier_gain.map(|e| e.mean),
                "complier_fraction": summary.complier_fraction.mean,
                "out": dir,
            }));
        }
        Command::Sweep(a) => {
            let mut m = PipelineManifest::load(&path)?;
            let base = scenario_base(&m, &a.scenario)?;
            let configs = sweep_grid(&base, &a.pi_max, &a.phi);
            let cohort = load_cohort(&m)?;
            let matrix = cohort.matrix_for(&OutcomeOptions::new(base.outcome_mode))?;
            let inputs = BacktestInputs { cohort: &cohort.dataset, matrix: &matrix, rankings: &cohort.rankings };
            let rows = sweep(&inputs, &configs)?;
            let out = a.scenario.out.clone().unwrap_or_else(|| m.dir().join("sweep.csv"));
            write_sweep(&out, &rows)?;
            m.record_output("sweep", &out)?;
            m.save()?;
            print(json!({"rows": rows.len(), "out": out}));
        }
        Command::Loo(a) => {
            let mut m = PipelineManifest::load(&path)?;
            let config = scenario_config(&m, &a)?;
            let cohort = load_cohort(&m)?;
            let matrix = cohort.matrix_for(&OutcomeOptions::new(config.outcome_mode))?;
            let inputs = BacktestInputs { cohort: &cohort.dataset, matrix: &matrix, rankings: &cohort.rankings };
            let report = leave_one_out(&inputs, &config)?;
            let out = a.scenario.out.clone().unwrap_or_else(|| m.dir().join("loo.csv"));
            write_loo(&out, &report)?;
            m.record_output("loo", &out)?;
            m.save()?;
            print(json!({
                "baseline_cohort_gain": report.baseline_cohort_gain,
                "interval": [report.interval_low, report.interval_high],
                "rows": report.rows.len(),
                "out": out,
            }));
        }
        Command::Subset(a) => {
            let mut m = PipelineManifest::load(&path)?;
            let config = scenario_config(&m, &a.sim)?;
            let rule = match a.rule {
                RuleChoice::Large => SubsetRule::Large { min_population: a.population },
                RuleChoice::LargeAndGrowing => {
                    SubsetRule::LargeAndGrowing { min_population: a.population, min_growth: a.min_growth }
                }
                RuleChoice::Small => SubsetRule::Small { max_population: a.population },
            };
            let cohort = load_cohort(&m)?;
            let matrix = cohort.matrix_for(&OutcomeOptions::new(config.outcome_mode))?;
            let inputs = BacktestInputs { cohort: &cohort.dataset, matrix: &matrix, rankings: &cohort.rankings };
            let report = subset_removal(&inputs, &config, rule)?;
            let dir = a.sim.scenario.out.clone().unwrap_or_else(|| m.dir().join("subset"));
            write_summary(&dir, &report.summary)?;
            write_json(&dir.join("subset.json"), &report)?;
            m.record_output("subset", &dir.join("subset.json"))?;
            m.save()?;
            print(json!({
                "excluded": report.excluded,
                "cohort_gain": report.summary.cohort_gain.mean,
                "out": dir,
            }));
        }
        Command::Audit(a) => {
            let mut m = PipelineManifest::load(&path)?;
            let data = pipeline::load_dataset_artifact(&m)?;
            let truth = pipeline::load_truth_artifact(&m, &data)?;
            let report = audit(&data, &truth, &a.strata)?;
            let out = a.out.unwrap_or_else(|| m.dir().join("bias_report.csv"));
            write_bias_report(&out, &report)?;
            m.record_output("audit", &out)?;
            let mut summary = json!({
                "cells": report.cells.len(),
                "interior": report.cells.iter().filter(|c| c.is_interior()).count(),
                "out": out,
            });
            if a.models {
                let models = pipeline::load_models_artifact(&m)?;
                let cells = model_bias_check(&models, &data, &truth, &a.strata)?;
                let model_out = out.with_file_name("model_bias.json");
                write_json(&model_out, &cells)?;
                m.record_output("model_bias", &model_out)?;
                summary["model_bias"] = json!(model_out);
            }
            m.save()?;
            print(summary);
        }
        Command::Serve(a) => {
            let m = PipelineManifest::load(&path)?;
            let config = ServiceConfig { max_sim_runs: a.max_sim_runs, sim_workers: a.sim_workers, bearer_token: a.token };
            let state = Arc::new(AppState::from_manifest(&m, config)?);
            serve(state, a.bind)?;
        }
    }
    Ok(())
}

fn parent(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Config file (or defaults) with command-line overrides applied.
fn scenario_base(m: &PipelineManifest, a: &ScenarioArgs) -> Result<SimulationConfig> {
    let mut c = match &a.config {
        Some(p) => read_json(p)?,
        None => SimulationConfig { seed: m.root_seed, ..Default::default() },
    };
    if let Some(v) = a.compliance_mode {
        c.compliance_mode = v;
    }
    if let Some(v) = a.z {
        c.z = v;
    }
    if let Some(v) = a.n_runs {
        c.n_runs = v;
    }
    if let Some(v) = a.outcome_mode {
        c.outcome_mode = v;
    }
    if let Some(v) = &a.excluded_locations {
        c.excluded_locations = v.iter().map(|&l| LocationId(l)).collect::<BTreeSet<_>>();
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.min_cell {
        c.min_cell = v;
    }
    if let Some(v) = &a.subgroups {
        c.subgroups = v.clone();
    }
    c.validate()?;
    Ok(c)
}

fn scenario_config(m: &PipelineManifest, a: &SimulateArgs) -> Result<SimulationConfig> {
    let mut c = scenario_base(m, &a.scenario)?;
    if let Some(v) = a.pi_max {
        c.pi_max = v;
    }
    if let Some(v) = a.phi {
        c.phi = v;
    }
    c.validate()?;
    Ok(c)
}

fn serve(state: Arc<AppState>, bind: SocketAddr) -> Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("tokio runtime", e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind).await.map_err(|e| Error::io(bind.to_string(), e))?;
        log::info!("listening on {bind} with model {}", state.model_hash);
        eprintln!("{}", json!({"listening": bind.to_string(), "model_hash": state.model_hash}));
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::io(bind.to_string(), e))
    })
}
