//! Comparison policies: oracle, uniform random, and popularity voting
//! (global or among nearest cosine friends).
//!
//! `PafLite` is a simplified popularity-amongst-friends scheme: the voter
//! set is the `W` users most cosine-similar to the target on commonly rated
//! items, and the vote is the count of +1 ratings. It stands in for the
//! exact published algorithm as an experimental comparator.

use crate::collab_greedy::ActionKind;
use crate::latent_model::Population;
use crate::policy::{random_unconsumed, Policy, PolicyError, StepPlan};
use crate::rng::{stream, SimRng};
use crate::sim_state::SessionState;
use serde::{Deserialize, Serialize};

/// Which policy a config row names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    CollaborativeGreedy,
    Oracle,
    Random,
    GlobalPopularity,
    PafLite,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::CollaborativeGreedy => "collaborative_greedy",
            PolicyKind::Oracle => "oracle",
            PolicyKind::Random => "random",
            PolicyKind::GlobalPopularity => "global_popularity",
            PolicyKind::PafLite => "paf_lite",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "collaborative_greedy" => Some(Self::CollaborativeGreedy),
            "oracle" => Some(Self::Oracle),
            "random" => Some(Self::Random),
            "global_popularity" => Some(Self::GlobalPopularity),
            "paf_lite" => Some(Self::PafLite),
            _ => None,
        }
    }
}

/// Voter set for popularity recommendations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PopularityMode {
    /// Every user votes.
    Global,
    /// Only the `W` users most cosine-similar to the target vote.
    Friends(usize),
}

fn pick_with_ties(candidates: &[usize], key: impl Fn(usize) -> u32, rng: &mut SimRng) -> usize {
    let mut best = 0u32;
    let mut ties: Vec<usize> = Vec::new();
    for &i in candidates {
        let v = key(i);
        if ties.is_empty() || v > best {
            best = v;
            ties.clear();
            ties.push(i);
        } else if v == best {
            ties.push(i);
        }
    }
    ties[rng.gen_range(ties.len())]
}

/// Recommend any unconsumed likable item (true `p > 1/2`) if one exists,
/// otherwise any unconsumed item; ties uniform.
pub fn oracle_recommend(
    state: &SessionState,
    user: usize,
    pop: &Population,
    policy_seed: u64,
) -> Result<usize, PolicyError> {
    let unconsumed: Vec<usize> = state.unconsumed_items(user).collect();
    if unconsumed.is_empty() {
        return Err(PolicyError::Exhausted { user });
    }
    let likable: Vec<usize> =
        unconsumed.iter().copied().filter(|&i| pop.is_likable(user, i)).collect();
    let candidates = if likable.is_empty() { &unconsumed } else { &likable };
    let t = state.t() + 1;
    let mut rng = SimRng::for_stream(policy_seed, &[stream::TIE_BREAK, t as u64, user as u64]);
    Ok(candidates[rng.gen_range(candidates.len())])
}

/// Uniformly random unconsumed item.
pub fn random_recommend(
    state: &SessionState,
    user: usize,
    rng: &mut SimRng,
) -> Result<usize, PolicyError> {
    random_unconsumed(state, user, rng)
}

/// +1 vote counts per item over the given voters.
fn plus_votes(state: &SessionState, voters: impl Iterator<Item = usize>) -> Vec<u32> {
    let mut votes = vec![0u32; state.num_items()];
    for v in voters {
        let row = state.rating_row(v);
        for &i in state.rated_items(v) {
            if row[i as usize] == 1 {
                votes[i as usize] += 1;
            }
        }
    }
    votes
}

/// The `count` users most cosine-similar to `user` on commonly rated items
/// (full revealed ratings), excluding `user`; ties by lower user id.
fn top_friends(state: &SessionState, user: usize, count: usize) -> Vec<usize> {
    let mut sims: Vec<(f64, usize)> = (0..state.num_users())
        .filter(|&v| v != user)
        .map(|v| {
            let (mut dot, mut overlap) = (0i64, 0i64);
            let (ru, rv) = (state.rating_row(user), state.rating_row(v));
            for &i in state.rated_items(user) {
                let i = i as usize;
                if rv[i] != 0 {
                    dot += (ru[i] as i64) * (rv[i] as i64);
                    overlap += 1;
                }
            }
            let sim = if overlap == 0 { 0.0 } else { dot as f64 / overlap as f64 };
            (sim, v)
        })
        .collect();
    sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    sims.truncate(count);
    sims.into_iter().map(|(_, v)| v).collect()
}

fn popularity_pick(
    state: &SessionState,
    user: usize,
    votes: &[u32],
    epsilon: f64,
    policy_seed: u64,
) -> Result<usize, PolicyError> {
    let t = state.t() + 1;
    let mut explore_rng =
        SimRng::for_stream(policy_seed, &[stream::EXPLORE, t as u64, user as u64]);
    if explore_rng.gen_bool(epsilon) {
        return random_unconsumed(state, user, &mut explore_rng);
    }
    let unconsumed: Vec<usize> = state.unconsumed_items(user).collect();
    if unconsumed.is_empty() {
        return Err(PolicyError::Exhausted { user });
    }
    let mut tie_rng = SimRng::for_stream(policy_seed, &[stream::TIE_BREAK, t as u64, user as u64]);
    Ok(pick_with_ties(&unconsumed, |i| votes[i], &mut tie_rng))
}

/// Epsilon-greedy popularity: with probability `epsilon` a random unconsumed
/// item, otherwise the unconsumed item with the most +1 ratings among the
/// voter set; ties uniform.
pub fn popularity_recommend(
    state: &SessionState,
    user: usize,
    mode: PopularityMode,
    epsilon: f64,
    policy_seed: u64,
) -> Result<usize, PolicyError> {
    let votes = match mode {
        PopularityMode::Global => plus_votes(state, 0..state.num_users()),
        PopularityMode::Friends(w) => {
            plus_votes(state, top_friends(state, user, w).into_iter())
        }
    };
    popularity_pick(state, user, &votes, epsilon, policy_seed)
}

/// Oracle with access to the true preference probabilities.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    pop: Population,
    seed: u64,
}

impl OraclePolicy {
    pub fn new(pop: Population, seed: u64) -> Self {
        Self { pop, seed }
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn plan(&self, state: &SessionState) -> Result<StepPlan, PolicyError> {
        let items = (0..state.num_users())
            .map(|u| oracle_recommend(state, u, &self.pop, self.seed))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StepPlan { action: ActionKind::Exploit, items })
    }
}

/// Uniform random control.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    seed: u64,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn plan(&self, state: &SessionState) -> Result<StepPlan, PolicyError> {
        let t = state.t() + 1;
        let items = (0..state.num_users())
            .map(|u| {
                let mut rng =
                    SimRng::for_stream(self.seed, &[stream::EXPLORE, t as u64, u as u64]);
                random_unconsumed(state, u, &mut rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StepPlan { action: ActionKind::RandomExplore, items })
    }
}

/// Epsilon-greedy popularity policy over a configurable voter set.
#[derive(Debug, Clone)]
pub struct PopularityPolicy {
    mode: PopularityMode,
    epsilon: f64,
    seed: u64,
}

impl PopularityPolicy {
    pub fn global(epsilon: f64, seed: u64) -> Self {
        Self { mode: PopularityMode::Global, epsilon, seed }
    }

    pub fn friends(w: usize, epsilon: f64, seed: u64) -> Self {
        Self { mode: PopularityMode::Friends(w), epsilon, seed }
    }
}

impl Policy for PopularityPolicy {
    fn name(&self) -> &'static str {
        match self.mode {
            PopularityMode::Global => "global_popularity",
            PopularityMode::Friends(_) => "paf_lite",
        }
    }

    fn plan(&self, state: &SessionState) -> Result<StepPlan, PolicyError> {
        let items = match self.mode {
            PopularityMode::Global => {
                // One shared vote table per step.
                let votes = plus_votes(state, 0..state.num_users());
                (0..state.num_users())
                    .map(|u| popularity_pick(state, u, &votes, self.epsilon, self.seed))
                    .collect::<Result<Vec<_>, _>>()?
            }
            PopularityMode::Friends(_) => (0..state.num_users())
                .map(|u| popularity_recommend(state, u, self.mode, self.epsilon, self.seed))
                .collect::<Result<Vec<_>, _>>()?,
        };
        Ok(StepPlan { action: ActionKind::Exploit, items })
    }
}
