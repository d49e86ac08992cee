//! Flat key=value experiment configs.
//!
//! Lines are `key = value`; `#` starts a comment; keys are fixed and
//! unknown ones are rejected with their line number. All paths are
//! resolved relative to the config file's directory. The effective config
//! hashes to a fingerprint (canonical serialization, FNV-1a); every output
//! manifest embeds it and aggregation refuses to mix mismatched outputs.

use cfsim_core::baselines::PolicyKind;
use cfsim_core::collab_greedy;
use cfsim_core::data_ingest::fnv1a64;
use cfsim_core::latent_model::{AssignmentMode, GenScheme};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn line_err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Line { line, message: message.into() }
}

/// Environment half of a config.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    Synthetic {
        k: usize,
        m: usize,
        n: usize,
        delta: f64,
        scheme: GenScheme,
        mu: f64,
        assignment: AssignmentMode,
    },
    Replay {
        matrix_dir: PathBuf,
    },
}

/// Neighborhood threshold: a number, or derived from the generated
/// population as `2 delta^2 (1 + gamma_hat)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaSpec {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub policies: Vec<PolicyKind>,
    pub theta: ThetaSpec,
    pub alpha: f64,
    pub alpha_r: Option<f64>,
    pub empty_overlap_neighbors: bool,
    pub paf_w: usize,
    pub paf_epsilon: f64,
    pub pop_epsilon: f64,
}

impl ExperimentConfig {
    /// Canonical one-line-per-field rendering; the basis of the config hash.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        match &self.env {
            EnvSpec::Synthetic { k, m, n, delta, scheme, mu, assignment } => {
                let scheme = match scheme {
                    GenScheme::Noiseless => "noiseless",
                    GenScheme::Symmetric => "symmetric",
                    GenScheme::Biased => "biased",
                };
                let assignment = match assignment {
                    AssignmentMode::Uniform => "uniform",
                    AssignmentMode::Balanced => "balanced",
                };
                let _ = writeln!(
                    s,
                    "env=synthetic k={k} m={m} n={n} delta={delta} scheme={scheme} mu={mu} assignment={assignment}"
                );
            }
            EnvSpec::Replay { matrix_dir } => {
                let _ = writeln!(s, "env=replay matrix_dir={}", matrix_dir.display());
            }
        }
        let _ = writeln!(s, "T={}", self.horizon);
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "seeds={}", seeds.join(","));
        let policies: Vec<&str> = self.policies.iter().map(|p| p.as_str()).collect();
        let _ = writeln!(s, "policies={}", policies.join(","));
        match self.theta {
            ThetaSpec::Auto => {
                let _ = writeln!(s, "theta=auto");
            }
            ThetaSpec::Fixed(v) => {
                let _ = writeln!(s, "theta={v}");
            }
        }
        let _ = writeln!(s, "alpha={}", self.alpha);
        if let Some(ar) = self.alpha_r {
            let _ = writeln!(s, "alpha_r={ar}");
        }
        let _ = writeln!(s, "empty_overlap_neighbors={}", self.empty_overlap_neighbors);
        let _ = writeln!(s, "paf.w={} paf.epsilon={}", self.paf_w, self.paf_epsilon);
        let _ = writeln!(s, "pop.epsilon={}", self.pop_epsilon);
        s
    }

    pub fn hash(&self) -> String {
        fnv1a64(self.canonical().as_bytes())
    }
}

/// Raw `key = value` lines with line numbers, comments stripped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, (String, usize)>, ConfigError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(line_err(line_no, format!("expected `key = value`, got `{line}`")));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if value.is_empty() {
            return Err(line_err(line_no, format!("empty value for key `{key}`")));
        }
        if map.insert(key.clone(), (value, line_no)).is_some() {
            return Err(line_err(line_no, format!("duplicate key `{key}`")));
        }
    }
    Ok(map)
}

struct KeyMap {
    map: BTreeMap<String, (String, usize)>,
}

impl KeyMap {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.map.remove(key)
    }

    /// Remove whichever of the aliases is present (first match wins).
    fn take_any(&mut self, keys: &[&str]) -> Option<(String, usize)> {
        keys.iter().find_map(|k| self.map.remove(*k))
    }

    fn require(&mut self, key: &str) -> Result<(String, usize), ConfigError> {
        self.take(key).ok_or_else(|| ConfigError::Invalid(format!("missing required key `{key}`")))
    }

    fn parse_with<T>(
        &mut self,
        key: &str,
        parse: impl Fn(&str) -> Option<T>,
        what: &str,
    ) -> Result<Option<T>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((value, line)) => parse(&value)
                .map(Some)
                .ok_or_else(|| line_err(line, format!("`{key}` must be {what}, got `{value}`"))),
        }
    }

    fn parse_any_with<T>(
        &mut self,
        keys: &[&str],
        parse: impl Fn(&str) -> Option<T>,
        what: &str,
    ) -> Result<Option<T>, ConfigError> {
        match self.take_any(keys) {
            None => Ok(None),
            Some((value, line)) => parse(&value).map(Some).ok_or_else(|| {
                line_err(line, format!("`{}` must be {what}, got `{value}`", keys[0]))
            }),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        if let Some((key, (_, line))) = self.map.into_iter().next() {
            return Err(line_err(line, format!("unknown key `{key}`")));
        }
        Ok(())
    }
}

fn parse_u64_list(s: &str) -> Option<Vec<u64>> {
    let items: Result<Vec<u64>, _> = s.split(',').map(|x| x.trim().parse()).collect();
    items.ok().filter(|v| !v.is_empty())
}

/// Parse and validate an experiment config. `base_dir` anchors relative paths.
pub fn parse_experiment_config(
    text: &str,
    base_dir: &Path,
) -> Result<ExperimentConfig, ConfigError> {
    let mut keys = KeyMap { map: parse_key_values(text)? };

    let (env_kind, env_line) = keys.require("env")?;
    let env = match env_kind.as_str() {
        "synthetic" => {
            let k = keys
                .parse_with("k", |s| s.parse::<usize>().ok(), "a positive integer")?
                .ok_or_else(|| ConfigError::Invalid("synthetic env requires `k`".into()))?;
            let m = keys
                .parse_with("m", |s| s.parse::<usize>().ok(), "a positive integer")?
                .ok_or_else(|| ConfigError::Invalid("synthetic env requires `m`".into()))?;
            let n = keys
                .parse_with("n", |s| s.parse::<usize>().ok(), "a positive integer")?
                .ok_or_else(|| ConfigError::Invalid("synthetic env requires `n`".into()))?;
            let delta = keys
                .parse_with("delta", |s| s.parse::<f64>().ok(), "a real in (0, 1/2]")?
                .ok_or_else(|| ConfigError::Invalid("synthetic env requires `delta`".into()))?;
            let scheme = keys
                .parse_with(
                    "scheme",
                    |s| match s {
                        "noiseless" => Some(GenScheme::Noiseless),
                        "symmetric" => Some(GenScheme::Symmetric),
                        "biased" => Some(GenScheme::Biased),
                        _ => None,
                    },
                    "one of noiseless|symmetric|biased",
                )?
                .ok_or_else(|| ConfigError::Invalid("synthetic env requires `scheme`".into()))?;
            let mu = keys
                .parse_with("mu", |s| s.parse::<f64>().ok(), "a real in (0, 1/2]")?
                .unwrap_or(0.5);
            let assignment = keys
                .parse_with(
                    "assignment",
                    |s| match s {
                        "uniform" => Some(AssignmentMode::Uniform),
                        "balanced" => Some(AssignmentMode::Balanced),
                        _ => None,
                    },
                    "uniform|balanced",
                )?
                .unwrap_or(AssignmentMode::Uniform);
            EnvSpec::Synthetic { k, m, n, delta, scheme, mu, assignment }
        }
        "replay" => {
            let (dir, _) = keys.require("matrix_dir")?;
            EnvSpec::Replay { matrix_dir: base_dir.join(dir) }
        }
        other => {
            return Err(line_err(env_line, format!("env must be synthetic|replay, got `{other}`")))
        }
    };

    let horizon = keys
        .parse_with("T", |s| s.parse::<usize>().ok(), "a positive integer")?
        .ok_or_else(|| ConfigError::Invalid("missing required key `T`".into()))?;
    let seeds = keys
        .parse_with("seeds", parse_u64_list, "a comma list of integers")?
        .ok_or_else(|| ConfigError::Invalid("missing required key `seeds`".into()))?;
    let (out_raw, _) = keys.require("output_dir")?;
    let output_dir = base_dir.join(out_raw);
    let policies = keys
        .parse_any_with(
            &["policies", "policy"],
            |s| {
                let kinds: Option<Vec<PolicyKind>> =
                    s.split(',').map(|p| PolicyKind::parse(p.trim())).collect();
                kinds.filter(|v| !v.is_empty())
            },
            "a comma list of policy names",
        )?
        .ok_or_else(|| ConfigError::Invalid("missing required key `policies`".into()))?;

    let theta = keys
        .parse_with(
            "theta",
            |s| {
                if s == "auto" {
                    Some(ThetaSpec::Auto)
                } else {
                    s.parse::<f64>().ok().filter(|v| (0.0..=1.0).contains(v)).map(ThetaSpec::Fixed)
                }
            },
            "`auto` or a real in [0, 1]",
        )?
        .unwrap_or(ThetaSpec::Auto);
    let alpha = keys
        .parse_with(
            "alpha",
            |s| s.parse::<f64>().ok().filter(|&v| v > 0.0 && v <= collab_greedy::MAX_ALPHA),
            "a real in (0, 4/7]",
        )?
        .unwrap_or(0.5);
    let alpha_r = keys.parse_with(
        "alpha_r",
        |s| s.parse::<f64>().ok().filter(|&v| v > 0.0 && v <= collab_greedy::MAX_ALPHA),
        "a real in (0, 4/7]",
    )?;
    let empty_overlap_neighbors = keys
        .parse_with("empty_overlap_neighbors", |s| s.parse::<bool>().ok(), "true|false")?
        .unwrap_or(true);
    let paf_w = keys
        .parse_any_with(
            &["paf.w", "paf.W"],
            |s| s.parse::<usize>().ok().filter(|&v| v >= 1),
            "an integer >= 1",
        )?
        .unwrap_or(10);
    let paf_epsilon = keys
        .parse_with(
            "paf.epsilon",
            |s| s.parse::<f64>().ok().filter(|v| (0.0..=1.0).contains(v)),
            "a real in [0, 1]",
        )?
        .unwrap_or(0.1);
    let pop_epsilon = keys
        .parse_with(
            "pop.epsilon",
            |s| s.parse::<f64>().ok().filter(|v| (0.0..=1.0).contains(v)),
            "a real in [0, 1]",
        )?
        .unwrap_or(0.1);
    keys.finish()?;

    let config = ExperimentConfig {
        env,
        horizon,
        seeds,
        output_dir,
        policies,
        theta,
        alpha,
        alpha_r,
        empty_overlap_neighbors,
        paf_w,
        paf_epsilon,
        pop_epsilon,
    };
    validate(&config)?;
    Ok(config)
}

fn validate(config: &ExperimentConfig) -> Result<(), ConfigError> {
    match &config.env {
        EnvSpec::Synthetic { k, m, n, delta, mu, .. } => {
            if *k < 1 || *m < 1 || *n < *k {
                return Err(ConfigError::Invalid(format!(
                    "need k >= 1, m >= 1, n >= k (k={k}, m={m}, n={n})"
                )));
            }
            if !(*delta > 0.0 && *delta <= 0.5) {
                return Err(ConfigError::Invalid(format!("delta = {delta} outside (0, 1/2]")));
            }
            if !(*mu > 0.0 && *mu <= 0.5) {
                return Err(ConfigError::Invalid(format!("mu = {mu} outside (0, 1/2]")));
            }
            if config.horizon > *m {
                return Err(ConfigError::Invalid(format!(
                    "T = {} exceeds item count m = {m}",
                    config.horizon
                )));
            }
        }
        EnvSpec::Replay { matrix_dir } => {
            // Read just the manifest so a bad horizon is rejected before
            // any run starts.
            let manifest_path = matrix_dir.join("manifest.json");
            let text = std::fs::read_to_string(&manifest_path).map_err(|source| {
                ConfigError::Io { path: manifest_path.display().to_string(), source }
            })?;
            let manifest: cfsim_core::data_ingest::MatrixManifest =
                serde_json::from_str(&text).map_err(|e| {
                    ConfigError::Invalid(format!("unreadable manifest {}: {e}", manifest_path.display()))
                })?;
            if config.horizon > manifest.m {
                return Err(ConfigError::Invalid(format!(
                    "T = {} exceeds replay item count m = {}",
                    config.horizon, manifest.m
                )));
            }
            if config.theta == ThetaSpec::Auto
                && config.policies.contains(&PolicyKind::CollaborativeGreedy)
            {
                return Err(ConfigError::Invalid(
                    "theta = auto needs a synthetic environment; set a numeric theta".into(),
                ));
            }
            if config.policies.contains(&PolicyKind::Oracle) {
                return Err(ConfigError::Invalid(
                    "the oracle policy needs ground-truth probabilities (synthetic env)".into(),
                ));
            }
        }
    }
    if config.horizon == 0 {
        return Err(ConfigError::Invalid("T must be >= 1".into()));
    }
    Ok(())
}

/// Parameter grid for `sweep`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub thetas: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl Default for SweepGrid {
    /// theta in {0.0, 0.1, ..., 1.0} x alpha in {0.1, ..., 0.5}: 55 cells.
    fn default() -> Self {
        Self {
            thetas: (0..=10).map(|i| i as f64 / 10.0).collect(),
            alphas: (1..=5).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

/// Parse a grid file with optional `theta = ...` / `alpha = ...` lists;
/// missing keys fall back to the default grid.
pub fn parse_sweep_grid(text: &str) -> Result<SweepGrid, ConfigError> {
    let mut keys = KeyMap { map: parse_key_values(text)? };
    let default = SweepGrid::default();
    let parse_f64_list = |s: &str| -> Option<Vec<f64>> {
        let items: Result<Vec<f64>, _> = s.split(',').map(|x| x.trim().parse()).collect();
        items.ok().filter(|v| !v.is_empty())
    };
    let thetas = keys
        .parse_with("theta", parse_f64_list, "a comma list of reals")?
        .unwrap_or(default.thetas);
    let alphas = keys
        .parse_with("alpha", parse_f64_list, "a comma list of reals")?
        .unwrap_or(default.alphas);
    keys.finish()?;
    for &t in &thetas {
        if !(0.0..=1.0).contains(&t) {
            return Err(ConfigError::Invalid(format!("grid theta {t} outside [0, 1]")));
        }
    }
    for &a in &alphas {
        if !(a > 0.0 && a <= collab_greedy::MAX_ALPHA) {
            return Err(ConfigError::Invalid(format!("grid alpha {a} outside (0, 4/7]")));
        }
    }
    Ok(SweepGrid { thetas, alphas })
}
