//! Batch experiment driver: (policy x seed) grids, per-run CSV/manifest
//! outputs, cross-seed aggregation, and the (theta, alpha) sweep.
//!
//! Every run derives its environment, session, and policy seeds from one
//! master seed, so different policies under the same master seed see
//! identical rating realizations (common random numbers) and reruns are
//! byte-identical regardless of worker count. Jobs write only their own
//! files; aggregation happens afterwards by reading the run outputs back,
//! which keeps the aggregate recomputable from the outputs alone.

use crate::config::{EnvSpec, ExperimentConfig, SweepGrid, ThetaSpec};
use anyhow::{bail, Context, Result};
use cfsim_core::baselines::{OraclePolicy, PolicyKind, PopularityPolicy, RandomPolicy};
use cfsim_core::collab_greedy::{default_theta, AlgorithmParams, CollabGreedy};
use cfsim_core::data_ingest::RatingMatrix;
use cfsim_core::latent_model::{
    compute_gamma_hat, generate_population, Population, PopulationParams,
};
use cfsim_core::policy::Policy;
use cfsim_core::rng::{derive_seed, stream};
use cfsim_core::simulator::{run, Environment, MetricsSeries, RunSummary};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Per-run sidecar: the summary plus the config fingerprint.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub summary: RunSummary,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub policy: PolicyKind,
    pub seed: u64,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    pub aggregate_path: PathBuf,
}

/// Tracks files created by one invocation so failures can clean them up.
struct OutputTracker {
    created: Mutex<Vec<PathBuf>>,
}

impl OutputTracker {
    fn new() -> Self {
        Self { created: Mutex::new(Vec::new()) }
    }

    fn write(&self, path: &Path, contents: &str) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.created.lock().unwrap().push(path.to_path_buf());
        Ok(())
    }

    fn discard_outputs(&self) {
        for path in self.created.lock().unwrap().iter() {
            let _ = fs::remove_file(path);
        }
    }
}

fn build_population(config: &ExperimentConfig, master_seed: u64) -> Result<Option<Population>> {
    match &config.env {
        EnvSpec::Synthetic { k, m, n, delta, scheme, mu, assignment } => {
            let mut params = PopulationParams::new(
                *k,
                *m,
                *n,
                *delta,
                *scheme,
                derive_seed(master_seed, &[stream::POPULATION]),
            );
            params.mu_target = *mu;
            params.assignment = *assignment;
            Ok(Some(generate_population(&params).context("generating population")?))
        }
        EnvSpec::Replay { .. } => Ok(None),
    }
}

fn build_environment(
    config: &ExperimentConfig,
    master_seed: u64,
    pop: Option<&Population>,
    matrix: Option<&RatingMatrix>,
) -> Result<Environment> {
    match &config.env {
        EnvSpec::Synthetic { .. } => Ok(Environment::synthetic(
            pop.expect("synthetic env has a population").clone(),
            derive_seed(master_seed, &[stream::RATING]),
        )),
        EnvSpec::Replay { .. } => {
            Ok(Environment::replay(matrix.expect("replay env has a matrix").clone()))
        }
    }
}

fn algorithm_params(
    config: &ExperimentConfig,
    pop: Option<&Population>,
    override_theta_alpha: Option<(f64, f64)>,
) -> Result<AlgorithmParams> {
    let (theta, alpha) = match override_theta_alpha {
        Some(pair) => pair,
        None => {
            let theta = match config.theta {
                ThetaSpec::Fixed(v) => v,
                ThetaSpec::Auto => {
                    let pop = pop.context("theta = auto needs a synthetic environment")?;
                    default_theta(pop.delta(), compute_gamma_hat(pop)?)
                }
            };
            (theta, config.alpha)
        }
    };
    let mut params = AlgorithmParams::new(theta, alpha)?;
    if let Some(alpha_r) = config.alpha_r {
        params = params.with_alpha_r(alpha_r)?;
    }
    params.empty_overlap_neighbors = config.empty_overlap_neighbors;
    Ok(params)
}

fn build_policy(
    kind: PolicyKind,
    config: &ExperimentConfig,
    pop: Option<&Population>,
    policy_seed: u64,
    override_theta_alpha: Option<(f64, f64)>,
) -> Result<(Box<dyn Policy>, serde_json::Value)> {
    Ok(match kind {
        PolicyKind::CollaborativeGreedy => {
            let params = algorithm_params(config, pop, override_theta_alpha)?;
            let params_json = serde_json::to_value(&params)?;
            (Box::new(CollabGreedy::new(params, policy_seed)), params_json)
        }
        PolicyKind::Oracle => {
            let pop = pop.context("the oracle policy needs a synthetic environment")?;
            (Box::new(OraclePolicy::new(pop.clone(), policy_seed)), serde_json::json!({}))
        }
        PolicyKind::Random => {
            (Box::new(RandomPolicy::new(policy_seed)), serde_json::json!({}))
        }
        PolicyKind::GlobalPopularity => (
            Box::new(PopularityPolicy::global(config.pop_epsilon, policy_seed)),
            serde_json::json!({"epsilon": config.pop_epsilon}),
        ),
        PolicyKind::PafLite => (
            Box::new(PopularityPolicy::friends(config.paf_w, config.paf_epsilon, policy_seed)),
            serde_json::json!({"w": config.paf_w, "epsilon": config.paf_epsilon}),
        ),
    })
}

/// One (policy, seed) run in memory.
fn run_one(
    config: &ExperimentConfig,
    kind: PolicyKind,
    master_seed: u64,
    matrix: Option<&RatingMatrix>,
    override_theta_alpha: Option<(f64, f64)>,
) -> Result<(MetricsSeries, RunManifest)> {
    let pop = build_population(config, master_seed)?;
    let env = build_environment(config, master_seed, pop.as_ref(), matrix)?;
    let (policy, params_json) = build_policy(
        kind,
        config,
        pop.as_ref(),
        derive_seed(master_seed, &[stream::POLICY]),
        override_theta_alpha,
    )?;
    let outcome = run(
        &env,
        policy.as_ref(),
        config.horizon,
        derive_seed(master_seed, &[stream::SESSION]),
    )?;
    let metrics = outcome.metrics;
    let manifest = RunManifest {
        summary: RunSummary {
            policy: kind.as_str().to_string(),
            params: params_json,
            seeds: vec![master_seed],
            horizon: config.horizon,
            r_plus_fraction: metrics.r_plus_fraction(config.horizon)?,
            avg_cum_reward: metrics.avg_cumulative_reward(config.horizon)?,
        },
        config_hash: config.hash(),
    };
    Ok((metrics, manifest))
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")?;
    pool.install(f)
}

fn load_replay_matrix(config: &ExperimentConfig) -> Result<Option<RatingMatrix>> {
    match &config.env {
        EnvSpec::Replay { matrix_dir } => Ok(Some(
            RatingMatrix::load(matrix_dir)
                .with_context(|| format!("loading replay matrix from {}", matrix_dir.display()))?,
        )),
        EnvSpec::Synthetic { .. } => Ok(None),
    }
}

/// Run the full (policy x seed) grid and write per-run CSVs and manifests
/// plus the cross-seed aggregate. Removes whatever it created on failure.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport> {
    let tracker = OutputTracker::new();
    match run_experiment_inner(config, jobs, &tracker) {
        Ok(report) => Ok(report),
        Err(e) => {
            tracker.discard_outputs();
            Err(e)
        }
    }
}

fn run_experiment_inner(
    config: &ExperimentConfig,
    jobs: usize,
    tracker: &OutputTracker,
) -> Result<ExperimentReport> {
    let matrix = load_replay_matrix(config)?;
    let run_dir = config.output_dir.join("runs");
    let grid: Vec<(PolicyKind, u64)> = config
        .policies
        .iter()
        .flat_map(|&kind| config.seeds.iter().map(move |&seed| (kind, seed)))
        .collect();

    let records: Vec<RunRecord> = with_pool(jobs, || {
        grid.par_iter()
            .map(|&(kind, seed)| {
                let (metrics, manifest) = run_one(config, kind, seed, matrix.as_ref(), None)?;
                let stem = format!("{}__seed{}", kind.as_str(), seed);
                let csv_path = run_dir.join(format!("{stem}.csv"));
                let manifest_path = run_dir.join(format!("{stem}.json"));
                tracker.write(&csv_path, &metrics.to_csv())?;
                let mut manifest_text = serde_json::to_string_pretty(&manifest)?;
                manifest_text.push('\n');
                tracker.write(&manifest_path, &manifest_text)?;
                Ok(RunRecord { policy: kind, seed, csv_path, manifest_path })
            })
            .collect()
    })?;

    let aggregate_path = config.output_dir.join("aggregate.csv");
    let aggregate = aggregate_runs(&config.hash(), config.horizon, &records)?;
    tracker.write(&aggregate_path, &aggregate)?;
    Ok(ExperimentReport { runs: records, aggregate_path })
}

/// Columns parsed back from a run CSV.
struct RunColumns {
    cum_reward: Vec<i64>,
    cum_likable: Vec<u64>,
}

fn parse_run_csv(text: &str) -> Result<RunColumns> {
    let mut cum_reward = Vec::new();
    let mut cum_likable = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            continue; // header
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            bail!("run csv line {} has {} fields", idx + 1, fields.len());
        }
        cum_reward.push(fields[4].parse::<i64>()?);
        cum_likable.push(fields[5].parse::<u64>()?);
    }
    Ok(RunColumns { cum_reward, cum_likable })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Build the aggregate CSV from run files on disk, refusing to mix outputs
/// whose manifests carry a different config hash.
pub fn aggregate_runs(
    config_hash: &str,
    horizon: usize,
    records: &[RunRecord],
) -> Result<String> {
    let mut out = String::from(
        "policy,t,mean_cum_reward,std_cum_reward,mean_cum_likable,std_cum_likable\n",
    );
    let mut policies: Vec<PolicyKind> = Vec::new();
    for r in records {
        if !policies.contains(&r.policy) {
            policies.push(r.policy);
        }
    }
    for policy in policies {
        let group: Vec<&RunRecord> = records.iter().filter(|r| r.policy == policy).collect();
        let mut columns = Vec::new();
        for record in &group {
            let manifest_text = fs::read_to_string(&record.manifest_path)
                .with_context(|| format!("reading {}", record.manifest_path.display()))?;
            let manifest: RunManifest = serde_json::from_str(&manifest_text)
                .with_context(|| format!("parsing {}", record.manifest_path.display()))?;
            if manifest.config_hash != config_hash {
                bail!(
                    "refusing to aggregate {}: config hash {} != {}",
                    record.manifest_path.display(),
                    manifest.config_hash,
                    config_hash
                );
            }
            let csv_text = fs::read_to_string(&record.csv_path)
                .with_context(|| format!("reading {}", record.csv_path.display()))?;
            let cols = parse_run_csv(&csv_text)?;
            if cols.cum_reward.len() != horizon {
                bail!(
                    "{} has {} steps, expected {horizon}",
                    record.csv_path.display(),
                    cols.cum_reward.len()
                );
            }
            columns.push(cols);
        }
        for t in 1..=horizon {
            let rewards: Vec<f64> =
                columns.iter().map(|c| c.cum_reward[t - 1] as f64).collect();
            let likables: Vec<f64> =
                columns.iter().map(|c| c.cum_likable[t - 1] as f64).collect();
            let (mr, sr) = mean_std(&rewards);
            let (ml, sl) = mean_std(&likables);
            out.push_str(&format!("{},{t},{mr},{sr},{ml},{sl}\n", policy.as_str()));
        }
    }
    Ok(out)
}

/// One sweep cell outcome.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub theta: f64,
    pub alpha: f64,
    /// Mean (over seeds) trapezoidal area under the average cumulative
    /// reward curve; absent when the cell failed.
    pub mean_auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SweepReport {
    pub best_theta: f64,
    pub best_alpha: f64,
    pub best_auc: f64,
    pub cells: Vec<SweepCell>,
    pub config_hash: String,
}

fn trapezoid_auc(metrics: &MetricsSeries) -> Result<f64> {
    let horizon = metrics.horizon();
    let mut auc = 0.0;
    for t in 1..horizon {
        let a = metrics.avg_cumulative_reward(t)?;
        let b = metrics.avg_cumulative_reward(t + 1)?;
        auc += (a + b) / 2.0;
    }
    Ok(auc)
}

/// Evaluate every (theta, alpha) cell with Collaborative-Greedy over the
/// config's seeds and rank by area under the cumulative reward curve.
/// Ties prefer lower theta, then lower alpha. Cell failures are recorded
/// and the sweep continues.
pub fn sweep(config: &ExperimentConfig, grid: &SweepGrid, jobs: usize) -> Result<SweepReport> {
    let matrix = load_replay_matrix(config)?;
    let cells: Vec<(f64, f64)> = grid
        .thetas
        .iter()
        .flat_map(|&t| grid.alphas.iter().map(move |&a| (t, a)))
        .collect();

    let evaluated: Vec<SweepCell> = with_pool(jobs, || {
        Ok(cells
            .par_iter()
            .map(|&(theta, alpha)| {
                let mut aucs = Vec::new();
                for &seed in &config.seeds {
                    match run_one(
                        config,
                        PolicyKind::CollaborativeGreedy,
                        seed,
                        matrix.as_ref(),
                        Some((theta, alpha)),
                    )
                    .and_then(|(m, _)| trapezoid_auc(&m))
                    {
                        Ok(auc) => aucs.push(auc),
                        Err(e) => {
                            return SweepCell {
                                theta,
                                alpha,
                                mean_auc: None,
                                error: Some(e.to_string()),
                            }
                        }
                    }
                }
                let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
                SweepCell { theta, alpha, mean_auc: Some(mean), error: None }
            })
            .collect())
    })?;

    let best = evaluated
        .iter()
        .filter(|c| c.mean_auc.is_some())
        .min_by(|a, b| {
            let (au, bu) = (a.mean_auc.unwrap(), b.mean_auc.unwrap());
            // Highest area first; ties break toward lower theta, then alpha.
            bu.partial_cmp(&au)
                .unwrap()
                .then(a.theta.partial_cmp(&b.theta).unwrap())
                .then(a.alpha.partial_cmp(&b.alpha).unwrap())
        })
        .context("every sweep cell failed")?;

    Ok(SweepReport {
        best_theta: best.theta,
        best_alpha: best.alpha,
        best_auc: best.mean_auc.unwrap(),
        cells: evaluated.clone(),
        config_hash: config.hash(),
    })
}

/// Persist a sweep: `sweep.csv` (full table) and `best.json`.
pub fn write_sweep_outputs(report: &SweepReport, output_dir: &Path) -> Result<()> {
    fs::create_dir_all(output_dir)
        .with_context(|| format!("creating {}", output_dir.display()))?;
    let mut table = String::from("theta,alpha,mean_auc,status\n");
    for cell in &report.cells {
        match (&cell.mean_auc, &cell.error) {
            (Some(auc), _) => {
                table.push_str(&format!("{},{},{auc},ok\n", cell.theta, cell.alpha))
            }
            (None, Some(err)) => table.push_str(&format!(
                "{},{},,error: {}\n",
                cell.theta,
                cell.alpha,
                err.replace(',', ";").replace('\n', " ")
            )),
            (None, None) => unreachable!("cell without result or error"),
        }
    }
    fs::write(output_dir.join("sweep.csv"), table).context("writing sweep.csv")?;
    let best = serde_json::json!({
        "theta": report.best_theta,
        "alpha": report.best_alpha,
        "mean_auc": report.best_auc,
        "config_hash": report.config_hash,
    });
    fs::write(output_dir.join("best.json"), format!("{}\n", serde_json::to_string_pretty(&best)?))
        .context("writing best.json")?;
    Ok(())
}
