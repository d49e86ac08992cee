//! Collaborative-Greedy: cosine-neighborhood collaborative filtering with
//! two kinds of exploration.
//!
//! Each time step performs exactly one shared action:
//!
//! * random exploration (probability `1/n^alpha`): every user gets a
//!   uniformly random unconsumed item;
//! * joint exploration (probability `1/t^alpha`): every user gets the next
//!   item of the shared ordering `sigma` they have not consumed, building a
//!   common block of items on which users can be compared;
//! * otherwise exploitation: every user gets the unconsumed item with the
//!   highest neighborhood plurality score.
//!
//! Neighborhoods threshold the inner product of joint-restricted rating
//! vectors: `u` and `v` are neighbors when `<Y~_u, Y~_v> >= theta * |overlap|`,
//! which for +/-1 ratings is exactly "cosine similarity on the common
//! support is at least theta". Scores then use the *full* revealed ratings
//! of the neighbors, including items seen through random exploration.
//!
//! When the two exploration probabilities sum past 1 (small t), joint
//! exploration is clipped to `1 - 1/n^alpha` and exploitation gets nothing;
//! the random-exploration rate is preserved exactly.

use crate::policy::{random_unconsumed, Policy, PolicyError, StepPlan};
use crate::rng::{stream, SimRng};
use crate::sim_state::SessionState;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Largest admissible exploration decay rate.
pub const MAX_ALPHA: f64 = 4.0 / 7.0;

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("theta = {0} outside [0, 1]")]
    Theta(f64),
    #[error("alpha = {0} outside (0, 4/7]")]
    Alpha(f64),
}

/// Tunable knobs of the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmParams {
    /// Neighborhood cosine threshold, in [0, 1].
    pub theta: f64,
    /// Exploration decay rate, in (0, 4/7].
    pub alpha: f64,
    /// Optional separate decay rate for random exploration. No theory
    /// backing; exposed for sensitivity runs only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_r: Option<f64>,
    /// Whether pairs with empty rating overlap count as neighbors (the
    /// literal 0 >= 0 reading). Default true.
    #[serde(default = "default_true")]
    pub empty_overlap_neighbors: bool,
}

fn default_true() -> bool {
    true
}

impl AlgorithmParams {
    pub fn new(theta: f64, alpha: f64) -> Result<Self, ParamsError> {
        if !(0.0..=1.0).contains(&theta) || !theta.is_finite() {
            return Err(ParamsError::Theta(theta));
        }
        if !(alpha > 0.0 && alpha <= MAX_ALPHA) {
            return Err(ParamsError::Alpha(alpha));
        }
        Ok(Self { theta, alpha, alpha_r: None, empty_overlap_neighbors: true })
    }

    pub fn with_alpha_r(mut self, alpha_r: f64) -> Result<Self, ParamsError> {
        if !(alpha_r > 0.0 && alpha_r <= MAX_ALPHA) {
            return Err(ParamsError::Alpha(alpha_r));
        }
        self.alpha_r = Some(alpha_r);
        Ok(self)
    }

    fn random_explore_alpha(&self) -> f64 {
        self.alpha_r.unwrap_or(self.alpha)
    }
}

/// Default threshold when the generating model is known: `2 delta^2 (1 + gamma)`,
/// clamped into [0, 1].
pub fn default_theta(delta: f64, gamma_hat: f64) -> f64 {
    (2.0 * delta * delta * (1.0 + gamma_hat)).clamp(0.0, 1.0)
}

/// The step-level action, shared by every user in that step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    RandomExplore,
    JointExplore,
    Exploit,
}

impl ActionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionKind::RandomExplore => "random_explore",
            ActionKind::JointExplore => "joint_explore",
            ActionKind::Exploit => "exploit",
        }
    }
}

/// Random-exploration probability `1/n^alpha`.
pub fn epsilon_r(num_users: usize, alpha: f64) -> f64 {
    assert!(num_users >= 1, "epsilon_r: need at least one user");
    (num_users as f64).powf(-alpha)
}

/// Joint-exploration probability `1/t^alpha`. The schedule is defined for
/// steps t >= 1.
pub fn epsilon_j(t: usize, alpha: f64) -> f64 {
    assert!(t >= 1, "epsilon_j: schedule is defined for t >= 1");
    (t as f64).powf(-alpha)
}

/// Draw the shared action for step `t` with a single uniform draw.
pub fn sample_action(
    t: usize,
    num_users: usize,
    params: &AlgorithmParams,
    rng: &mut SimRng,
) -> ActionKind {
    let p_random = epsilon_r(num_users, params.random_explore_alpha());
    let p_joint = epsilon_j(t, params.alpha).min(1.0 - p_random);
    let x = rng.next_f64();
    if x < p_random {
        ActionKind::RandomExplore
    } else if x < p_random + p_joint {
        ActionKind::JointExplore
    } else {
        ActionKind::Exploit
    }
}

#[inline]
fn neighbor_test(dot: i64, overlap: i64, theta: f64, include_empty_overlap: bool) -> bool {
    if overlap == 0 {
        include_empty_overlap
    } else {
        dot as f64 >= theta * overlap as f64
    }
}

/// Inner product and support overlap of two users' joint-restricted ratings.
fn joint_dot_overlap(state: &SessionState, u: usize, v: usize) -> (i64, i64) {
    let (mut dot, mut overlap) = (0i64, 0i64);
    let (ru, rv) = (state.rating_row(u), state.rating_row(v));
    for &i in state.jointly_explored_items() {
        let (a, b) = (ru[i as usize], rv[i as usize]);
        if a != 0 && b != 0 {
            dot += (a as i64) * (b as i64);
            overlap += 1;
        }
    }
    (dot, overlap)
}

/// The neighborhood of `u` under the literal reading: empty-overlap pairs
/// (including `u` itself before any joint exploration) pass the test.
pub fn neighborhood(state: &SessionState, u: usize, theta: f64) -> Vec<usize> {
    neighborhood_filtered(state, u, theta, true)
}

/// Neighborhood with empty-overlap pairs optionally excluded.
pub fn neighborhood_filtered(
    state: &SessionState,
    u: usize,
    theta: f64,
    include_empty_overlap: bool,
) -> Vec<usize> {
    (0..state.num_users())
        .filter(|&v| {
            let (dot, overlap) = joint_dot_overlap(state, u, v);
            neighbor_test(dot, overlap, theta, include_empty_overlap)
        })
        .collect()
}

/// Plurality score of `item` among `neighbors`: fraction of +1 ratings over
/// nonzero ratings, using the full revealed ratings; 1/2 when no neighbor
/// has rated the item.
pub fn score(state: &SessionState, item: usize, neighbors: &[usize]) -> f64 {
    let mut plus = 0u64;
    let mut total = 0u64;
    for &v in neighbors {
        match state.rating(v, item) {
            1 => {
                plus += 1;
                total += 1;
            }
            -1 => total += 1,
            _ => {}
        }
    }
    if total == 0 {
        0.5
    } else {
        plus as f64 / total as f64
    }
}

fn argmax_with_ties(scores: impl Iterator<Item = (usize, f64)>, rng: &mut SimRng) -> Option<usize> {
    let mut best = f64::NEG_INFINITY;
    let mut ties: Vec<usize> = Vec::new();
    for (item, s) in scores {
        if s > best {
            best = s;
            ties.clear();
            ties.push(item);
        } else if s == best {
            ties.push(item);
        }
    }
    if ties.is_empty() {
        None
    } else {
        Some(ties[rng.gen_range(ties.len())])
    }
}

/// Exploitation recommendation for one user: the unconsumed item with the
/// highest score, ties broken uniformly at random (seeded per step and user).
pub fn exploit_recommend(
    state: &SessionState,
    user: usize,
    params: &AlgorithmParams,
    policy_seed: u64,
) -> Result<usize, PolicyError> {
    let neighbors =
        neighborhood_filtered(state, user, params.theta, params.empty_overlap_neighbors);
    let m = state.num_items();
    let mut plus = vec![0u32; m];
    let mut total = vec![0u32; m];
    for &v in &neighbors {
        let row = state.rating_row(v);
        for &i in state.rated_items(v) {
            let i = i as usize;
            total[i] += 1;
            if row[i] == 1 {
                plus[i] += 1;
            }
        }
    }
    let t = state.t() + 1;
    let mut tie_rng = SimRng::for_stream(policy_seed, &[stream::TIE_BREAK, t as u64, user as u64]);
    let scores = state.unconsumed_items(user).map(|i| {
        let s = if total[i] == 0 { 0.5 } else { plus[i] as f64 / total[i] as f64 };
        (i, s)
    });
    argmax_with_ties(scores, &mut tie_rng).ok_or(PolicyError::Exhausted { user })
}

/// Exploitation for every user at once. Users are grouped by their
/// joint-restricted rating signature: same signature means same
/// neighborhood and same score table, which collapses the noiseless case
/// to a handful of groups. Bit-identical to calling [`exploit_recommend`]
/// per user.
fn exploit_all(
    state: &SessionState,
    params: &AlgorithmParams,
    policy_seed: u64,
) -> Result<Vec<usize>, PolicyError> {
    let n = state.num_users();
    let m = state.num_items();
    let prefix = state.jointly_explored_items();

    let mut groups: BTreeMap<Vec<i8>, Vec<usize>> = BTreeMap::new();
    for u in 0..n {
        let row = state.rating_row(u);
        let sig: Vec<i8> = prefix.iter().map(|&i| row[i as usize]).collect();
        groups.entry(sig).or_default().push(u);
    }
    let sigs: Vec<&Vec<i8>> = groups.keys().collect();
    let members: Vec<&Vec<usize>> = groups.values().collect();
    let g = sigs.len();

    // Pairwise neighbor decision between signature groups.
    let mut group_neighbors: Vec<Vec<usize>> = vec![Vec::new(); g];
    for a in 0..g {
        for b in a..g {
            let (mut dot, mut overlap) = (0i64, 0i64);
            for (&x, &y) in sigs[a].iter().zip(sigs[b]) {
                if x != 0 && y != 0 {
                    dot += (x as i64) * (y as i64);
                    overlap += 1;
                }
            }
            if neighbor_test(dot, overlap, params.theta, params.empty_overlap_neighbors) {
                group_neighbors[a].push(b);
                if a != b {
                    group_neighbors[b].push(a);
                }
            }
        }
    }

    // Per-group vote tables over the full revealed ratings.
    let mut plus: Vec<Vec<u32>> = vec![vec![0; m]; g];
    let mut total: Vec<Vec<u32>> = vec![vec![0; m]; g];
    for (gi, mems) in members.iter().enumerate() {
        for &u in mems.iter() {
            let row = state.rating_row(u);
            for &i in state.rated_items(u) {
                let i = i as usize;
                total[gi][i] += 1;
                if row[i] == 1 {
                    plus[gi][i] += 1;
                }
            }
        }
    }

    let t = state.t() + 1;
    let mut recommendations = vec![0usize; n];
    let mut plus_sum = vec![0u32; m];
    let mut total_sum = vec![0u32; m];
    for (gi, mems) in members.iter().enumerate() {
        plus_sum.iter_mut().for_each(|x| *x = 0);
        total_sum.iter_mut().for_each(|x| *x = 0);
        for &nb in &group_neighbors[gi] {
            for i in 0..m {
                plus_sum[i] += plus[nb][i];
                total_sum[i] += total[nb][i];
            }
        }
        for &u in mems.iter() {
            let mut tie_rng =
                SimRng::for_stream(policy_seed, &[stream::TIE_BREAK, t as u64, u as u64]);
            let scores = state.unconsumed_items(u).map(|i| {
                let s = if total_sum[i] == 0 {
                    0.5
                } else {
                    plus_sum[i] as f64 / total_sum[i] as f64
                };
                (i, s)
            });
            recommendations[u] =
                argmax_with_ties(scores, &mut tie_rng).ok_or(PolicyError::Exhausted { user: u })?;
        }
    }
    Ok(recommendations)
}

/// The Collaborative-Greedy policy.
#[derive(Debug, Clone)]
pub struct CollabGreedy {
    params: AlgorithmParams,
    seed: u64,
}

impl CollabGreedy {
    pub fn new(params: AlgorithmParams, seed: u64) -> Self {
        Self { params, seed }
    }

    pub fn params(&self) -> &AlgorithmParams {
        &self.params
    }
}

impl Policy for CollabGreedy {
    fn name(&self) -> &'static str {
        "collaborative_greedy"
    }

    fn plan(&self, state: &SessionState) -> Result<StepPlan, PolicyError> {
        let t = state.t() + 1;
        let n = state.num_users();
        let mut action_rng = SimRng::for_stream(self.seed, &[stream::ACTION, t as u64]);
        let action = sample_action(t, n, &self.params, &mut action_rng);
        let items = match action {
            ActionKind::RandomExplore => (0..n)
                .map(|u| {
                    let mut rng = SimRng::for_stream(
                        self.seed,
                        &[stream::EXPLORE, t as u64, u as u64],
                    );
                    random_unconsumed(state, u, &mut rng)
                })
                .collect::<Result<Vec<_>, _>>()?,
            ActionKind::JointExplore => (0..n)
                .map(|u| {
                    state.next_joint_item(u).map_err(|_| PolicyError::Exhausted { user: u })
                })
                .collect::<Result<Vec<_>, _>>()?,
            ActionKind::Exploit => exploit_all(state, &self.params, self.seed)?,
        };
        Ok(StepPlan { action, items })
    }
}
