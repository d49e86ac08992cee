//! `cfsim`: batch driver for online collaborative filtering experiments.
//!
//! Subcommands:
//! * `simulate`  -- run a (policy x seed) grid from a config file, writing
//!   per-run metric CSVs, run manifests, and a cross-seed aggregate;
//! * `sweep`     -- grid-search Collaborative-Greedy's theta/alpha by area
//!   under the cumulative reward curve;
//! * `check-bounds` -- Monte Carlo validation of the tail bounds
//!   (lemma4 | lemma5 | egood), emitting a JSON report;
//! * `ingest`    -- build a dense quantized replay matrix from a raw
//!   star-rating dump.

use anyhow::{bail, Context, Result};
use cfsim_cli::{config, experiment};
use cfsim_core::data_ingest::{
    dense_submatrix, fnv1a64, parse_ratings_csv, TripleFormat, DEFAULT_QUANTIZE_THRESHOLD,
};
use cfsim_core::latent_model::GenScheme;
use cfsim_core::theory_checks::{
    good_event_check, lemma4_check, lemma5_check, CheckReport, GoodEventCheckConfig,
};
use clap::{Parser, Subcommand, ValueEnum};
use config::{parse_experiment_config, parse_key_values, parse_sweep_grid, SweepGrid};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "cfsim",
    version,
    about = "Online collaborative filtering simulator: Collaborative-Greedy, baselines, \
             replay experiments, and concentration-bound validators"
)]
struct Cli {
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for independent runs and sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (policy, seed) pair from the config and aggregate.
    Simulate {
        /// Experiment config file (key = value lines).
        #[arg(long)]
        config: PathBuf,
    },
    /// Grid-search theta and alpha for Collaborative-Greedy.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Grid file with `theta = ...` / `alpha = ...` lists; the default
        /// grid is theta 0.0..1.0 x alpha 0.1..0.5.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Validate a concentration bound by Monte Carlo simulation.
    CheckBounds {
        #[arg(long, value_enum)]
        which: WhichBound,
        /// Parameter file (key = value lines) for the chosen check.
        #[arg(long)]
        params: PathBuf,
    },
    /// Build a dense quantized replay matrix from a rating dump.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Input layout: comma | double-colon.
        #[arg(long)]
        format: String,
        /// Number of top users to keep.
        #[arg(long)]
        n_top: usize,
        /// Number of top items to keep.
        #[arg(long)]
        m_top: usize,
        #[arg(long)]
        out: PathBuf,
        /// Stars at or above this quantize to +1.
        #[arg(long, default_value_t = DEFAULT_QUANTIZE_THRESHOLD)]
        threshold: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichBound {
    Lemma4,
    Lemma5,
    Egood,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { config } => simulate(&config, cli.seed, cli.jobs),
        Command::Sweep { config, grid } => run_sweep(&config, grid.as_deref(), cli.seed, cli.jobs),
        Command::CheckBounds { which, params } => check_bounds(which, &params),
        Command::Ingest { input, format, n_top, m_top, out, threshold } => {
            ingest(&input, &format, n_top, m_top, &out, threshold)
        }
    }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<config::ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cfg = parse_experiment_config(&text, base)
        .with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(seed) = seed_override {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn simulate(config_path: &Path, seed_override: Option<u64>, jobs: usize) -> Result<()> {
    let cfg = load_config(config_path, seed_override)?;
    let report = experiment::run_experiment(&cfg, jobs)?;
    println!(
        "wrote {} runs under {} and aggregate {}",
        report.runs.len(),
        cfg.output_dir.join("runs").display(),
        report.aggregate_path.display()
    );
    Ok(())
}

fn run_sweep(
    config_path: &Path,
    grid_path: Option<&Path>,
    seed_override: Option<u64>,
    jobs: usize,
) -> Result<()> {
    let cfg = load_config(config_path, seed_override)?;
    let grid = match grid_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read grid {}", p.display()))?;
            parse_sweep_grid(&text).with_context(|| format!("invalid grid {}", p.display()))?
        }
        None => SweepGrid::default(),
    };
    let report = experiment::sweep(&cfg, &grid, jobs)?;
    experiment::write_sweep_outputs(&report, &cfg.output_dir)?;
    println!(
        "evaluated {} cells; best theta = {}, alpha = {} (mean auc {})",
        report.cells.len(),
        report.best_theta,
        report.best_alpha,
        report.best_auc
    );
    Ok(())
}

struct ParamFile {
    map: BTreeMap<String, (String, usize)>,
    path: String,
}

impl ParamFile {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read params {}", path.display()))?;
        Ok(Self { map: parse_key_values(&text)?, path: path.display().to_string() })
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let (value, _) = self
            .map
            .get(key)
            .with_context(|| format!("{}: missing key `{key}`", self.path))?;
        value.parse().map_err(|_| {
            anyhow::anyhow!("{}: key `{key}` has unparseable value `{value}`", self.path)
        })
    }

    fn get_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.map.get(key) {
            None => Ok(default),
            Some(_) => self.get(key),
        }
    }
}

fn check_bounds(which: WhichBound, params_path: &Path) -> Result<()> {
    let params = ParamFile::load(params_path)?;
    let report: CheckReport = match which {
        WhichBound::Lemma4 => lemma4_check(
            params.get("n")?,
            params.get("k")?,
            params.get("trials")?,
            params.get("seed")?,
        ),
        WhichBound::Lemma5 => lemma5_check(
            params.get("t")?,
            params.get("alpha")?,
            params.get("trials")?,
            params.get("seed")?,
        ),
        WhichBound::Egood => {
            let scheme = match params.get_or::<String>("scheme", "noiseless".into())?.as_str() {
                "noiseless" => GenScheme::Noiseless,
                "symmetric" => GenScheme::Symmetric,
                "biased" => GenScheme::Biased,
                other => bail!("unknown scheme `{other}`"),
            };
            let theta = match params.get_or::<String>("theta", "auto".into())?.as_str() {
                "auto" => None,
                value => Some(
                    value
                        .parse::<f64>()
                        .with_context(|| format!("theta must be `auto` or a real, got {value}"))?,
                ),
            };
            let cfg = GoodEventCheckConfig {
                k: params.get("k")?,
                m: params.get("m")?,
                n: params.get("n")?,
                delta: params.get("delta")?,
                scheme,
                mu_target: params.get_or("mu", 0.5)?,
                alpha: params.get("alpha")?,
                theta,
                t: params.get("t")?,
                trials: params.get("trials")?,
                seed: params.get("seed")?,
            };
            good_event_check(&cfg)?
        }
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.pass {
        bail!("bound check `{}` failed: empirical {} vs bound {}", report.check, report.empirical, report.bound);
    }
    Ok(())
}

fn ingest(
    input: &Path,
    format: &str,
    n_top: usize,
    m_top: usize,
    out: &Path,
    threshold: f64,
) -> Result<()> {
    let format = TripleFormat::parse(format)
        .with_context(|| format!("format must be comma|double-colon, got `{format}`"))?;
    let bytes =
        fs::read(input).with_context(|| format!("cannot read input {}", input.display()))?;
    let source_hash = fnv1a64(&bytes);
    let parsed = parse_ratings_csv(input, format)?;
    let (matrix, stats) = dense_submatrix(&parsed.triples, n_top, m_top, threshold)?;
    matrix.save(out, &source_hash)?;
    let report = serde_json::json!({
        "n": matrix.num_users(),
        "m": matrix.num_items(),
        "density": matrix.density(),
        "threshold": threshold,
        "source_hash": source_hash,
        "malformed_lines": parsed.malformed,
        "duplicate_pairs": stats.duplicate_pairs,
        "output_dir": out.display().to_string(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
