//! Time-stepped environment loop and metrics.
//!
//! An [`Environment`] answers two questions about a (user, item) pair: the
//! realized rating, and whether the item is likable. Synthetic environments
//! draw the rating once from the population's like-probability, seeded per
//! (user, item) so the realization is independent of the policy under test
//! and of consumption order (common random numbers across policies). Replay
//! environments look the rating up in a fixed quantized matrix; a 0 entry
//! gives zero reward but still consumes the item.

use crate::collab_greedy::ActionKind;
use crate::data_ingest::RatingMatrix;
use crate::latent_model::Population;
use crate::policy::{Policy, PolicyError};
use crate::rng::{stream, SimRng};
use crate::sim_state::{new_session, SessionError, SessionState};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Configuration(String),
    #[error("metrics window [{from}, {to}] invalid for a series of length {len}")]
    BadWindow { from: usize, to: usize, len: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

enum EnvironmentKind {
    Synthetic(Population),
    Replay(RatingMatrix),
}

/// Rating source for a session.
pub struct Environment {
    kind: EnvironmentKind,
    rating_seed: u64,
}

impl Environment {
    pub fn synthetic(pop: Population, rating_seed: u64) -> Self {
        Self { kind: EnvironmentKind::Synthetic(pop), rating_seed }
    }

    pub fn replay(matrix: RatingMatrix) -> Self {
        Self { kind: EnvironmentKind::Replay(matrix), rating_seed: 0 }
    }

    pub fn num_users(&self) -> usize {
        match &self.kind {
            EnvironmentKind::Synthetic(pop) => pop.num_users(),
            EnvironmentKind::Replay(mat) => mat.num_users(),
        }
    }

    pub fn num_items(&self) -> usize {
        match &self.kind {
            EnvironmentKind::Synthetic(pop) => pop.num_items(),
            EnvironmentKind::Replay(mat) => mat.num_items(),
        }
    }

    pub fn population(&self) -> Option<&Population> {
        match &self.kind {
            EnvironmentKind::Synthetic(pop) => Some(pop),
            EnvironmentKind::Replay(_) => None,
        }
    }

    pub fn is_replay(&self) -> bool {
        matches!(self.kind, EnvironmentKind::Replay(_))
    }

    /// The rating user `u` gives item `i` upon consuming it. Synthetic:
    /// +/-1 drawn once per (seed, u, i). Replay: the fixed matrix entry,
    /// 0 meaning the pair is missing from the dataset.
    pub fn draw_rating(&self, user: usize, item: usize) -> i8 {
        match &self.kind {
            EnvironmentKind::Synthetic(pop) => {
                let p = pop.prob(user, item);
                let mut rng = SimRng::for_stream(
                    self.rating_seed,
                    &[stream::RATING, user as u64, item as u64],
                );
                if rng.gen_bool(p) {
                    1
                } else {
                    -1
                }
            }
            EnvironmentKind::Replay(mat) => mat.entry(user, item),
        }
    }

    /// Ground-truth likability: `p > 1/2` in synthetic mode; a +1 matrix
    /// entry in replay mode (the probability is unobservable there).
    pub fn is_likable(&self, user: usize, item: usize) -> bool {
        match &self.kind {
            EnvironmentKind::Synthetic(pop) => pop.is_likable(user, item),
            EnvironmentKind::Replay(mat) => mat.entry(user, item) == 1,
        }
    }
}

/// Aggregates for one time step (sums over users).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub t: usize,
    pub action: ActionKind,
    pub sum_reward: i64,
    pub sum_likable: u32,
    pub cum_reward: i64,
    pub cum_likable: u64,
}

/// Per-step reward and likable-count series for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub num_users: usize,
    pub steps: Vec<StepMetrics>,
}

impl MetricsSeries {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Fraction of likable recommendations over the 1-based inclusive
    /// window `[from, to]`.
    pub fn likable_fraction(&self, from: usize, to: usize) -> Result<f64, SimError> {
        if from < 1 || from > to || to > self.steps.len() {
            return Err(SimError::BadWindow { from, to, len: self.steps.len() });
        }
        let likable: u64 =
            self.steps[from - 1..to].iter().map(|s| s.sum_likable as u64).sum();
        let denom = (self.num_users * (to - from + 1)) as f64;
        Ok(likable as f64 / denom)
    }

    /// Cumulative likable count at step `t` divided by `t * n`; the
    /// proportion-of-likable objective.
    pub fn r_plus_fraction(&self, t: usize) -> Result<f64, SimError> {
        if t < 1 || t > self.steps.len() {
            return Err(SimError::BadWindow { from: 1, to: t, len: self.steps.len() });
        }
        Ok(self.steps[t - 1].cum_likable as f64 / (t * self.num_users) as f64)
    }

    /// Cumulative signed reward at step `t`, averaged over users.
    pub fn avg_cumulative_reward(&self, t: usize) -> Result<f64, SimError> {
        if t < 1 || t > self.steps.len() {
            return Err(SimError::BadWindow { from: 1, to: t, len: self.steps.len() });
        }
        Ok(self.steps[t - 1].cum_reward as f64 / self.num_users as f64)
    }

    /// Render as `t,action,sum_reward,sum_likable,cum_reward,cum_likable`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,action,sum_reward,sum_likable,cum_reward,cum_likable\n");
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.t,
                s.action.as_str(),
                s.sum_reward,
                s.sum_likable,
                s.cum_reward,
                s.cum_likable
            ));
        }
        out
    }
}

/// End-of-run summary, one per (policy, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    pub params: serde_json::Value,
    pub seeds: Vec<u64>,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub r_plus_fraction: f64,
    pub avg_cum_reward: f64,
}

pub struct RunOutcome {
    pub metrics: MetricsSeries,
    pub final_state: SessionState,
}

/// Execute `horizon` steps of `policy` against `env`. The session ordering
/// `sigma` comes from `session_seed`; ratings come from the environment's
/// own seed. Fails before any step if the horizon exceeds the item count.
pub fn run(
    env: &Environment,
    policy: &dyn Policy,
    horizon: usize,
    session_seed: u64,
) -> Result<RunOutcome, SimError> {
    let n = env.num_users();
    let m = env.num_items();
    if horizon > m {
        return Err(SimError::Configuration(format!(
            "horizon T = {horizon} exceeds item count m = {m}"
        )));
    }
    let mut state = new_session(n, m, session_seed)?;
    let mut steps = Vec::with_capacity(horizon);
    let mut cum_reward = 0i64;
    let mut cum_likable = 0u64;
    for t in 1..=horizon {
        let plan = policy.plan(&state)?;
        let ratings: Vec<i8> =
            plan.items.iter().enumerate().map(|(u, &i)| env.draw_rating(u, i)).collect();
        let sum_reward: i64 = ratings.iter().map(|&r| r as i64).sum();
        let sum_likable =
            plan.items.iter().enumerate().filter(|&(u, &i)| env.is_likable(u, i)).count() as u32;
        state.record_step(&plan.items, &ratings, plan.is_joint())?;
        cum_reward += sum_reward;
        cum_likable += sum_likable as u64;
        steps.push(StepMetrics {
            t,
            action: plan.action,
            sum_reward,
            sum_likable,
            cum_reward,
            cum_likable,
        });
    }
    Ok(RunOutcome { metrics: MetricsSeries { num_users: n, steps }, final_state: state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{OraclePolicy, RandomPolicy};
    use crate::latent_model::{Population, PreferenceVector};

    fn pop_single(probs: &[f64], n: usize) -> Population {
        Population::from_parts(
            vec![PreferenceVector::new(probs.to_vec()).unwrap()],
            vec![0; n],
            0.4,
            0,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_probabilities_give_deterministic_ratings() {
        let env = Environment::synthetic(pop_single(&[1.0, 0.0], 1), 5);
        for _ in 0..10 {
            assert_eq!(env.draw_rating(0, 0), 1);
            assert_eq!(env.draw_rating(0, 1), -1);
        }
    }

    #[test]
    fn fair_coin_ratings_have_near_zero_mean() {
        let env = Environment::synthetic(pop_single(&[0.5], 100_000), 123);
        let sum: i64 = (0..100_000).map(|u| env.draw_rating(u, 0) as i64).sum();
        let mean = sum as f64 / 100_000.0;
        assert!(mean.abs() <= 0.01, "mean {mean} outside [-0.01, 0.01]");
    }

    #[test]
    fn rating_is_stable_across_calls_and_policies() {
        let env = Environment::synthetic(pop_single(&[0.5; 20], 10), 9);
        let first: Vec<i8> = (0..20).map(|i| env.draw_rating(3, i)).collect();
        let second: Vec<i8> = (0..20).map(|i| env.draw_rating(3, i)).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn oracle_attains_the_envelope_exactly() {
        // Exactly 5 likable items of 10 per user; for every T <= 5 the
        // oracle's likable fraction is exactly 1.
        let probs = [0.9, 0.1, 0.9, 0.1, 0.9, 0.1, 0.9, 0.1, 0.9, 0.1];
        let pop = pop_single(&probs, 4);
        let env = Environment::synthetic(pop.clone(), 2);
        let out = run(&env, &OraclePolicy::new(pop, 3), 5, 17).unwrap();
        for t in 1..=5 {
            assert_eq!(out.metrics.r_plus_fraction(t).unwrap(), 1.0);
        }
    }

    #[test]
    fn random_on_unlikable_population_earns_nothing() {
        let pop = pop_single(&[0.1, 0.2, 0.05, 0.3], 3);
        let env = Environment::synthetic(pop, 2);
        let out = run(&env, &RandomPolicy::new(8), 4, 17).unwrap();
        assert_eq!(out.metrics.steps.last().unwrap().cum_likable, 0);
    }

    #[test]
    fn likable_fraction_window_arithmetic() {
        let mk = |t, likable| StepMetrics {
            t,
            action: ActionKind::Exploit,
            sum_reward: 0,
            sum_likable: likable,
            cum_reward: 0,
            cum_likable: 0,
        };
        let series = MetricsSeries { num_users: 4, steps: vec![mk(1, 0), mk(2, 3), mk(3, 3)] };
        assert_eq!(series.likable_fraction(2, 3).unwrap(), 0.75);
        assert_eq!(series.likable_fraction(1, 1).unwrap(), 0.0);
        assert!(series.likable_fraction(2, 1).is_err());
        assert!(series.likable_fraction(1, 9).is_err());
        assert!(series.likable_fraction(0, 2).is_err());
    }

    #[test]
    fn avg_cumulative_reward_arithmetic() {
        let mk = |t, sum: i64, cum: i64| StepMetrics {
            t,
            action: ActionKind::Exploit,
            sum_reward: sum,
            sum_likable: 0,
            cum_reward: cum,
            cum_likable: 0,
        };
        // n=2: step 1 rewards (+1, +1), step 2 rewards (+1, -1):
        // cumulative signed reward 2, averaged over the 2 users.
        let series = MetricsSeries { num_users: 2, steps: vec![mk(1, 2, 2), mk(2, 0, 2)] };
        assert_eq!(series.avg_cumulative_reward(2).unwrap(), 1.0);
        assert_eq!(series.avg_cumulative_reward(1).unwrap(), 1.0);
        // Replay-style zero rating: step 2 rewards (+1, 0).
        let series2 = MetricsSeries { num_users: 2, steps: vec![mk(1, 2, 2), mk(2, 1, 3)] };
        assert_eq!(series2.avg_cumulative_reward(2).unwrap(), 1.5);
    }

    #[test]
    fn all_likes_reach_horizon_reward() {
        let pop = pop_single(&[1.0; 6], 3);
        let env = Environment::synthetic(pop, 4);
        let out = run(&env, &RandomPolicy::new(1), 6, 5).unwrap();
        assert_eq!(out.metrics.avg_cumulative_reward(6).unwrap(), 6.0);
    }

    #[test]
    fn reward_conservation_against_session_state() {
        let pop = pop_single(&[0.5; 12], 5);
        let env = Environment::synthetic(pop, 31);
        let out = run(&env, &RandomPolicy::new(7), 12, 3).unwrap();
        let mut running = 0i64;
        for (idx, step) in out.metrics.steps.iter().enumerate() {
            running += step.sum_reward;
            assert_eq!(step.cum_reward, running);
            assert_eq!(step.t, idx + 1);
        }
        // Final cumulative reward equals (#+1) - (#-1) stored in the state.
        let mut from_state = 0i64;
        for u in 0..5 {
            for i in 0..12 {
                from_state += out.final_state.rating(u, i) as i64;
            }
        }
        assert_eq!(out.metrics.steps.last().unwrap().cum_reward, from_state);
    }

    #[test]
    fn horizon_beyond_items_is_rejected() {
        let pop = pop_single(&[0.9, 0.1], 2);
        let env = Environment::synthetic(pop, 0);
        assert!(matches!(
            run(&env, &RandomPolicy::new(0), 3, 0),
            Err(SimError::Configuration(_))
        ));
    }

    #[test]
    fn identical_seeds_give_identical_series() {
        let pop = pop_single(&[0.5; 10], 6);
        let env = Environment::synthetic(pop, 44);
        let a = run(&env, &RandomPolicy::new(9), 10, 2).unwrap();
        let b = run(&env, &RandomPolicy::new(9), 10, 2).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
    }

    #[test]
    fn replay_all_zero_matrix_completes_with_zero_reward() {
        use crate::data_ingest::RatingMatrix;
        let mat = RatingMatrix::from_entries(vec![0; 6], 2, 3, 4.0).unwrap();
        let env = Environment::replay(mat);
        let out = run(&env, &RandomPolicy::new(3), 3, 1).unwrap();
        let last = out.metrics.steps.last().unwrap();
        assert_eq!(last.t, 3);
        assert_eq!(last.cum_reward, 0);
        assert_eq!(last.cum_likable, 0);
        // Missing entries still consume items.
        for u in 0..2 {
            assert_eq!(out.final_state.consumed_count(u), 3);
            assert!(out.final_state.rated_items(u).is_empty());
        }
    }

    #[test]
    fn replay_draws_fixed_entries_and_plus_means_likable() {
        use crate::data_ingest::RatingMatrix;
        let mat = RatingMatrix::from_entries(vec![1, -1, 0, -1, 1, 0], 2, 3, 4.0).unwrap();
        let env = Environment::replay(mat);
        assert_eq!(env.draw_rating(0, 0), 1);
        assert_eq!(env.draw_rating(0, 1), -1);
        assert_eq!(env.draw_rating(1, 2), 0);
        assert!(env.is_likable(0, 0));
        assert!(!env.is_likable(0, 1));
        assert!(!env.is_likable(0, 2), "missing entries are not likable");
    }

    #[test]
    fn csv_layout_is_stable() {
        let mk = |t| StepMetrics {
            t,
            action: ActionKind::JointExplore,
            sum_reward: -1,
            sum_likable: 2,
            cum_reward: -1,
            cum_likable: 2,
        };
        let series = MetricsSeries { num_users: 3, steps: vec![mk(1)] };
        assert_eq!(
            series.to_csv(),
            "t,action,sum_reward,sum_likable,cum_reward,cum_likable\n1,joint_explore,-1,2,-1,2\n"
        );
    }
}
