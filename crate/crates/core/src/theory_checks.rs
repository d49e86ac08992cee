//! Closed-form learning-time and tail-bound formulas, with Monte Carlo
//! validators that check the bounds against simulation.
//!
//! The validators simulate the exact random object each bound speaks about
//! (type assignments, joint-exploration step counts, neighborhood
//! composition on live sessions) and compare the empirical tail frequency
//! against the closed form plus a 3-sigma Monte Carlo slack. These bounds
//! are true upper (or lower) bounds, so a failure indicates an
//! implementation bug, not noise.

use crate::collab_greedy::{self, AlgorithmParams, CollabGreedy};
use crate::latent_model::{
    compute_gamma_hat, generate_population, GenScheme, Population, PopulationParams,
};
use crate::rng::{derive_seed, stream, SimRng};
use crate::sim_state::SessionState;
use crate::simulator::{run, Environment, SimError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("bound premise not met: {0}")]
    PremiseNotMet(String),
    #[error("invalid configuration: {0}")]
    Configuration(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Inputs to the closed-form bounds. `c1` and `c2` are the unspecified
/// constants of the learning-time expression; reported values are "up to
/// constants" with the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub delta: f64,
    pub gamma: f64,
    pub alpha: f64,
    /// Tolerance parameter in (0, 1).
    pub delta_tol: f64,
    pub t: f64,
    pub c1: f64,
    pub c2: f64,
}

impl BoundInputs {
    pub fn new(n: usize, m: usize, k: usize, delta: f64, gamma: f64, alpha: f64, delta_tol: f64) -> Result<Self, TheoryError> {
        let this = Self { n, m, k, delta, gamma, alpha, delta_tol, t: 1.0, c1: 1.0, c2: 1.0 };
        this.validate()?;
        Ok(this)
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return Err(TheoryError::Domain(format!("delta = {} outside (0, 1/2]", self.delta)));
        }
        if self.gamma >= 1.0 {
            return Err(TheoryError::Domain(format!("gamma = {} must be < 1", self.gamma)));
        }
        if !(self.alpha > 0.0 && self.alpha <= collab_greedy::MAX_ALPHA) {
            return Err(TheoryError::Domain(format!("alpha = {} outside (0, 4/7]", self.alpha)));
        }
        if !(self.delta_tol > 0.0 && self.delta_tol < 1.0) {
            return Err(TheoryError::Domain(format!(
                "delta_tol = {} outside (0, 1)",
                self.delta_tol
            )));
        }
        if self.c1 < 0.0 || self.c2 < 0.0 {
            return Err(TheoryError::Domain("c1 and c2 must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Learning horizon, up to the constants `c1`, `c2`:
/// `c1 * (log(km / (delta * delta_tol)) / (delta^4 (1-gamma)^2))^(1/(1-alpha))
///  + c2 * (4 / delta_tol)^(1/alpha)`.
pub fn t_learn(inputs: &BoundInputs) -> Result<f64, TheoryError> {
    inputs.validate()?;
    let d4 = inputs.delta.powi(4);
    let sep = (1.0 - inputs.gamma).powi(2);
    let log_term = ((inputs.k * inputs.m) as f64 / (inputs.delta * inputs.delta_tol)).ln();
    let first = (log_term / (d4 * sep)).powf(1.0 / (1.0 - inputs.alpha));
    let second = (4.0 / inputs.delta_tol).powf(1.0 / inputs.alpha);
    // A zero coefficient drops its term even when the term overflows
    // (tiny alpha sends the second term to infinity).
    let weighted = |c: f64, term: f64| if c == 0.0 { 0.0 } else { c * term };
    Ok(weighted(inputs.c1, first) + weighted(inputs.c2, second))
}

/// Pairwise neighborhood error scale `exp(-delta^4 (1-gamma)^2 t^(1-alpha))`.
pub fn beta(delta: f64, gamma: f64, t: f64, alpha: f64) -> f64 {
    (-delta.powi(4) * (1.0 - gamma).powi(2) * t.powf(1.0 - alpha)).exp()
}

/// Lower bound on the probability of the good-neighborhood event after the
/// premise time: `1 - exp(-n/8k) - 12 exp(-delta^4 (1-gamma)^2 t^(1-alpha) / 20)`.
pub fn good_event_lower_bound(
    n: usize,
    k: usize,
    delta: f64,
    gamma: f64,
    t: f64,
    alpha: f64,
) -> f64 {
    let x = delta.powi(4) * (1.0 - gamma).powi(2) * t.powf(1.0 - alpha);
    1.0 - (-(n as f64) / (8.0 * k as f64)).exp() - 12.0 * (-x / 20.0).exp()
}

/// Time after which [`good_event_lower_bound`] applies:
/// `(2 log(10 k m n^alpha / delta) / (delta^4 (1-gamma)^2))^(1/(1-alpha))`.
pub fn good_event_premise_time(
    n: usize,
    m: usize,
    k: usize,
    delta: f64,
    gamma: f64,
    alpha: f64,
) -> f64 {
    let inner = 10.0 * (k * m) as f64 * (n as f64).powf(alpha) / delta;
    (2.0 * inner.ln() / (delta.powi(4) * (1.0 - gamma).powi(2))).powf(1.0 / (1.0 - alpha))
}

/// Output of one Monte Carlo bound validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub inputs: serde_json::Value,
    pub empirical: f64,
    pub bound: f64,
    pub slack: f64,
    pub pass: bool,
}

fn binomial_slack(bound: f64, trials: usize) -> f64 {
    let p = bound.clamp(0.0, 1.0);
    3.0 * (p * (1.0 - p) / trials as f64).sqrt()
}

/// Validate the type-count tail bound: the frequency that a fixed user's
/// type covers at most `n/2k` of `n` uniformly assigned users must stay
/// under `exp(-n/8k)` (plus sampling slack).
pub fn lemma4_check(n: usize, k: usize, trials: usize, seed: u64) -> CheckReport {
    assert!(n >= 1 && k >= 1 && trials >= 1);
    let cutoff = n as f64 / (2.0 * k as f64);
    let mut hits = 0usize;
    for trial in 0..trials {
        let mut rng = SimRng::for_stream(seed, &[stream::TRIAL, trial as u64]);
        let own_type = rng.gen_range(k);
        // Members of user 0's type among all n users (user 0 included).
        let mut members = 1usize;
        for _ in 1..n {
            if rng.gen_range(k) == own_type {
                members += 1;
            }
        }
        if members as f64 <= cutoff {
            hits += 1;
        }
    }
    let empirical = hits as f64 / trials as f64;
    let bound = (-(n as f64) / (8.0 * k as f64)).exp();
    let slack = binomial_slack(bound, trials);
    CheckReport {
        check: "lemma4".into(),
        inputs: serde_json::json!({"n": n, "k": k, "trials": trials, "seed": seed}),
        empirical,
        bound,
        slack,
        pass: empirical <= bound + slack,
    }
}

/// Validate the joint-exploration count tail bound: the frequency that
/// `sum_{s<=t} Bernoulli(s^-alpha)` falls below `t^(1-alpha)/2` must stay
/// under `exp(-t^(1-alpha)/20)` (plus sampling slack).
pub fn lemma5_check(t: usize, alpha: f64, trials: usize, seed: u64) -> CheckReport {
    assert!(t >= 1 && trials >= 1);
    assert!(alpha > 0.0 && alpha <= collab_greedy::MAX_ALPHA, "alpha outside (0, 4/7]");
    let probs: Vec<f64> = (1..=t).map(|s| (s as f64).powf(-alpha)).collect();
    let threshold = (t as f64).powf(1.0 - alpha) / 2.0;
    let mut hits = 0usize;
    for trial in 0..trials {
        let mut rng = SimRng::for_stream(seed, &[stream::TRIAL, trial as u64]);
        let mut joint = 0usize;
        for &p in &probs {
            if rng.gen_bool(p) {
                joint += 1;
            }
        }
        if (joint as f64) < threshold {
            hits += 1;
        }
    }
    let empirical = hits as f64 / trials as f64;
    let bound = (-(t as f64).powf(1.0 - alpha) / 20.0).exp();
    let slack = binomial_slack(bound, trials);
    CheckReport {
        check: "lemma5".into(),
        inputs: serde_json::json!({"t": t, "alpha": alpha, "trials": trials, "seed": seed}),
        empirical,
        bound,
        slack,
        pass: empirical <= bound + slack,
    }
}

/// Neighborhood composition of one user against the good-event thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodNeighborhoodStats {
    pub n_good: usize,
    pub n_bad: usize,
    /// `n / 5k`: required same-type neighbor count.
    pub good_threshold: f64,
    /// `delta * t * n^(1-alpha) / (10 k m)`: tolerated other-type neighbors.
    pub bad_threshold: f64,
    pub event_holds: bool,
}

/// Split a user's neighborhood by true type and evaluate the good-event
/// thresholds at time `t`. Needs ground-truth types, so synthetic runs only.
pub fn good_neighborhood_stats(
    state: &SessionState,
    user: usize,
    pop: &Population,
    params: &AlgorithmParams,
    t: usize,
) -> Result<GoodNeighborhoodStats, TheoryError> {
    if state.num_users() != pop.num_users() {
        return Err(TheoryError::Configuration(format!(
            "state has {} users, population has {}",
            state.num_users(),
            pop.num_users()
        )));
    }
    if t < 1 {
        return Err(TheoryError::Domain("t must be >= 1".into()));
    }
    let n = pop.num_users() as f64;
    let k = pop.num_types() as f64;
    let m = pop.num_items() as f64;
    let own = pop.type_of(user);
    let neighbors = collab_greedy::neighborhood_filtered(
        state,
        user,
        params.theta,
        params.empty_overlap_neighbors,
    );
    let n_good = neighbors.iter().filter(|&&v| pop.type_of(v) == own).count();
    let n_bad = neighbors.len() - n_good;
    let good_threshold = n / (5.0 * k);
    let bad_threshold = pop.delta() * t as f64 * n.powf(1.0 - params.alpha) / (10.0 * k * m);
    Ok(GoodNeighborhoodStats {
        n_good,
        n_bad,
        good_threshold,
        bad_threshold,
        event_holds: n_good as f64 >= good_threshold && n_bad as f64 <= bad_threshold,
    })
}

/// Configuration for the good-event Monte Carlo validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodEventCheckConfig {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub delta: f64,
    pub scheme: GenScheme,
    #[serde(default = "GoodEventCheckConfig::default_mu")]
    pub mu_target: f64,
    pub alpha: f64,
    /// Explicit threshold; when absent, `2 delta^2 (1 + gamma_hat)` per trial.
    #[serde(default)]
    pub theta: Option<f64>,
    pub t: usize,
    pub trials: usize,
    pub seed: u64,
}

impl GoodEventCheckConfig {
    fn default_mu() -> f64 {
        0.5
    }
}

/// Monte Carlo validation of the good-event probability lower bound.
///
/// Each trial draws a fresh population (covering assignment randomness),
/// runs Collaborative-Greedy for `t` steps, and evaluates the event for
/// user 0. Refuses to run when `t` is below the premise time or the bound
/// is nonpositive for some trial population; outside the premise region the
/// bound says nothing.
pub fn good_event_check(cfg: &GoodEventCheckConfig) -> Result<CheckReport, TheoryError> {
    if cfg.trials == 0 {
        return Err(TheoryError::Configuration("need at least one trial".into()));
    }
    let mut hits = 0usize;
    let mut bound_sum = 0.0;
    for trial in 0..cfg.trials {
        let trial_seed = derive_seed(cfg.seed, &[stream::TRIAL, trial as u64]);
        let mut pop_params = PopulationParams::new(
            cfg.k,
            cfg.m,
            cfg.n,
            cfg.delta,
            cfg.scheme,
            derive_seed(trial_seed, &[stream::POPULATION]),
        );
        pop_params.mu_target = cfg.mu_target;
        let pop = generate_population(&pop_params)
            .map_err(|e| TheoryError::Configuration(e.to_string()))?;
        let gamma_hat = compute_gamma_hat(&pop)
            .map_err(|e| TheoryError::Configuration(e.to_string()))?;

        let premise =
            good_event_premise_time(cfg.n, cfg.m, cfg.k, cfg.delta, gamma_hat, cfg.alpha);
        if (cfg.t as f64) < premise {
            return Err(TheoryError::PremiseNotMet(format!(
                "t = {} below premise time {premise:.1} (trial {trial})",
                cfg.t
            )));
        }
        let bound =
            good_event_lower_bound(cfg.n, cfg.k, cfg.delta, gamma_hat, cfg.t as f64, cfg.alpha);
        if bound <= 0.0 {
            return Err(TheoryError::PremiseNotMet(format!(
                "bound {bound:.4} nonpositive at t = {} (trial {trial})",
                cfg.t
            )));
        }
        bound_sum += bound;

        let theta = cfg.theta.unwrap_or_else(|| collab_greedy::default_theta(cfg.delta, gamma_hat));
        let params = AlgorithmParams::new(theta, cfg.alpha)
            .map_err(|e| TheoryError::Configuration(e.to_string()))?;
        let env =
            Environment::synthetic(pop.clone(), derive_seed(trial_seed, &[stream::RATING]));
        let policy = CollabGreedy::new(params.clone(), derive_seed(trial_seed, &[stream::POLICY]));
        let outcome = run(&env, &policy, cfg.t, derive_seed(trial_seed, &[stream::SESSION]))?;
        let stats = good_neighborhood_stats(&outcome.final_state, 0, &pop, &params, cfg.t)?;
        if stats.event_holds {
            hits += 1;
        }
    }
    let empirical = hits as f64 / cfg.trials as f64;
    let bound = bound_sum / cfg.trials as f64;
    let slack = binomial_slack(bound, cfg.trials);
    Ok(CheckReport {
        check: "egood".into(),
        inputs: serde_json::to_value(cfg).expect("config serializes"),
        empirical,
        bound,
        slack,
        // Lower bound: empirical frequency must not fall below it.
        pass: empirical >= bound - slack,
    })
}
