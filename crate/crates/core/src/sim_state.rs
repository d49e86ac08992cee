//! Mutable state of one online recommendation session.
//!
//! Tracks, per user, the revealed ratings and the consumed-item set, plus
//! the shared joint-exploration ordering `sigma` and how far along it the
//! session has advanced. The core contract is the no-repeat rule: once a
//! user consumes an item, recommending it to that user again is an error.
//!
//! "Jointly explored" is a global notion: the first `joint_count` items of
//! `sigma`, regardless of how any individual user came to rate them. A user
//! who already rated a prefix item through random exploration skips ahead
//! during a joint step; their rating of a later `sigma` item only becomes
//! visible to the similarity test once the global prefix reaches it.

use crate::rng::{stream, SimRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("invalid configuration: {0}")]
    Configuration(String),
    #[error("item {item} was already recommended to user {user}")]
    RepeatRecommendation { user: usize, item: usize },
    #[error("user {user} has consumed every item")]
    Exhausted { user: usize },
    #[error("rating {value} for user {user} not in {{-1, 0, +1}}")]
    InvalidRating { user: usize, value: i8 },
    #[error("step expects {expected} per-user entries, got {got}")]
    WrongArity { expected: usize, got: usize },
}

/// Revealed ratings of one user restricted to jointly explored items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevealedVector {
    entries: Vec<i8>,
}

impl RevealedVector {
    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().enumerate().filter(|(_, &v)| v != 0).map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    num_users: usize,
    num_items: usize,
    t: usize,
    sigma: Vec<u32>,
    joint_count: usize,
    /// Dense per-user ratings; 0 means unrated.
    ratings: Vec<Vec<i8>>,
    /// Items with a nonzero rating, in consumption order.
    rated_items: Vec<Vec<u32>>,
    consumed: Vec<Vec<bool>>,
    consumed_count: Vec<usize>,
    /// Per-user index of the first sigma position holding an unconsumed
    /// item (= sigma.len() when exhausted). Derived from `consumed`;
    /// maintained incrementally so joint steps are O(1).
    joint_cursor: Vec<usize>,
}

/// Checkpoint layout: `{t, joint_count, sigma, ratings, consumed}` with
/// ratings as sparse `[user, item, value]` triples and consumed as
/// per-user item lists.
#[derive(Serialize, Deserialize)]
struct SessionSnapshot {
    t: usize,
    joint_count: usize,
    sigma: Vec<u32>,
    ratings: Vec<(usize, u32, i8)>,
    consumed: Vec<Vec<u32>>,
}

/// Start an empty session with a seeded random item ordering.
pub fn new_session(num_users: usize, num_items: usize, seed: u64) -> Result<SessionState, SessionError> {
    let mut rng = SimRng::for_stream(seed, &[stream::SESSION]);
    let sigma = rng.permutation(num_items);
    SessionState::with_order(num_users, sigma)
}

impl SessionState {
    /// Start an empty session with an explicit item ordering.
    pub fn with_order(num_users: usize, sigma: Vec<u32>) -> Result<Self, SessionError> {
        let num_items = sigma.len();
        if num_users == 0 || num_items == 0 {
            return Err(SessionError::Configuration(format!(
                "need at least one user and one item (n = {num_users}, m = {num_items})"
            )));
        }
        let mut seen = vec![false; num_items];
        for &i in &sigma {
            if (i as usize) >= num_items || seen[i as usize] {
                return Err(SessionError::Configuration("sigma is not a permutation".into()));
            }
            seen[i as usize] = true;
        }
        Ok(Self {
            num_users,
            num_items,
            t: 0,
            sigma,
            joint_count: 0,
            ratings: vec![vec![0; num_items]; num_users],
            rated_items: vec![Vec::new(); num_users],
            consumed: vec![vec![false; num_items]; num_users],
            consumed_count: vec![0; num_users],
            joint_cursor: vec![0; num_users],
        })
    }

    fn advance_joint_cursor(&mut self, user: usize) {
        while self.joint_cursor[user] < self.num_items
            && self.consumed[user][self.sigma[self.joint_cursor[user]] as usize]
        {
            self.joint_cursor[user] += 1;
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Completed time steps.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn sigma(&self) -> &[u32] {
        &self.sigma
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    /// Rating of `item` by `user`: -1, 0 (unrated), or +1.
    pub fn rating(&self, user: usize, item: usize) -> i8 {
        self.ratings[user][item]
    }

    /// Full revealed rating row of one user (0 = unrated).
    pub fn rating_row(&self, user: usize) -> &[i8] {
        &self.ratings[user]
    }

    /// Items the user has rated nonzero, in consumption order.
    pub fn rated_items(&self, user: usize) -> &[u32] {
        &self.rated_items[user]
    }

    pub fn is_consumed(&self, user: usize, item: usize) -> bool {
        self.consumed[user][item]
    }

    pub fn consumed_count(&self, user: usize) -> usize {
        self.consumed_count[user]
    }

    pub fn unconsumed_items(&self, user: usize) -> impl Iterator<Item = usize> + '_ {
        self.consumed[user].iter().enumerate().filter(|(_, &c)| !c).map(|(i, _)| i)
    }

    /// The jointly explored items: the first `joint_count` entries of sigma.
    pub fn jointly_explored_items(&self) -> &[u32] {
        &self.sigma[..self.joint_count]
    }

    /// Ratings of `user` masked to the jointly explored items.
    pub fn revealed_joint_vector(&self, user: usize) -> RevealedVector {
        let mut entries = vec![0i8; self.num_items];
        for &i in self.jointly_explored_items() {
            entries[i as usize] = self.ratings[user][i as usize];
        }
        RevealedVector { entries }
    }

    /// The sigma-earliest item the user has not consumed.
    pub fn next_joint_item(&self, user: usize) -> Result<usize, SessionError> {
        self.sigma[self.joint_cursor[user]..]
            .iter()
            .map(|&i| i as usize)
            .find(|&i| !self.consumed[user][i])
            .ok_or(SessionError::Exhausted { user })
    }

    /// Apply one time step: each user consumes their recommended item and the
    /// given rating (0 = consumed without reward, replay mode) is recorded.
    /// Validates every user before mutating anything, so a failed step leaves
    /// the state untouched.
    pub fn record_step(
        &mut self,
        recommendations: &[usize],
        ratings: &[i8],
        was_joint: bool,
    ) -> Result<(), SessionError> {
        if recommendations.len() != self.num_users {
            return Err(SessionError::WrongArity {
                expected: self.num_users,
                got: recommendations.len(),
            });
        }
        if ratings.len() != self.num_users {
            return Err(SessionError::WrongArity { expected: self.num_users, got: ratings.len() });
        }
        for (user, (&item, &value)) in recommendations.iter().zip(ratings).enumerate() {
            if item >= self.num_items {
                return Err(SessionError::Configuration(format!(
                    "item {item} out of range for user {user}"
                )));
            }
            if self.consumed[user][item] {
                return Err(SessionError::RepeatRecommendation { user, item });
            }
            if !(-1..=1).contains(&value) {
                return Err(SessionError::InvalidRating { user, value });
            }
        }
        for (user, (&item, &value)) in recommendations.iter().zip(ratings).enumerate() {
            self.consumed[user][item] = true;
            self.consumed_count[user] += 1;
            if value != 0 {
                self.ratings[user][item] = value;
                self.rated_items[user].push(item as u32);
            }
            self.advance_joint_cursor(user);
        }
        self.t += 1;
        if was_joint {
            self.joint_count += 1;
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut triples = Vec::new();
        for (u, items) in self.rated_items.iter().enumerate() {
            for &i in items {
                triples.push((u, i, self.ratings[u][i as usize]));
            }
        }
        let consumed = self
            .consumed
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &c)| c)
                    .map(|(i, _)| i as u32)
                    .collect()
            })
            .collect();
        serde_json::to_value(SessionSnapshot {
            t: self.t,
            joint_count: self.joint_count,
            sigma: self.sigma.clone(),
            ratings: triples,
            consumed,
        })
        .expect("session serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, SessionError> {
        let snap: SessionSnapshot = serde_json::from_value(value.clone())
            .map_err(|e| SessionError::Configuration(format!("session json: {e}")))?;
        let num_users = snap.consumed.len();
        let mut state = Self::with_order(num_users, snap.sigma)?;
        if snap.joint_count > snap.t || snap.joint_count > state.num_items {
            return Err(SessionError::Configuration("joint_count exceeds t or m".into()));
        }
        for (u, items) in snap.consumed.iter().enumerate() {
            for &i in items {
                let i = i as usize;
                if i >= state.num_items || state.consumed[u][i] {
                    return Err(SessionError::Configuration(format!(
                        "bad consumed entry ({u}, {i})"
                    )));
                }
                state.consumed[u][i] = true;
                state.consumed_count[u] += 1;
            }
            state.advance_joint_cursor(u);
        }
        for &(u, i, v) in &snap.ratings {
            if u >= num_users || (i as usize) >= state.num_items {
                return Err(SessionError::Configuration(format!("bad rating entry ({u}, {i})")));
            }
            if !state.consumed[u][i as usize] {
                return Err(SessionError::Configuration(format!(
                    "rating for unconsumed item ({u}, {i})"
                )));
            }
            if v != -1 && v != 1 {
                return Err(SessionError::InvalidRating { user: u, value: v });
            }
            state.ratings[u][i as usize] = v;
            state.rated_items[u].push(i);
        }
        state.t = snap.t;
        state.joint_count = snap.joint_count;
        Ok(state)
    }
}
