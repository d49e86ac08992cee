//! Policy interface shared by Collaborative-Greedy and the baselines.
//!
//! A policy maps a read-only session snapshot to one unconsumed item per
//! user. All per-user randomness must be derived from (seed, step, user) so
//! plans are independent of evaluation order.

use crate::collab_greedy::ActionKind;
use crate::sim_state::SessionState;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("user {user} has no unconsumed items left")]
    Exhausted { user: usize },
    #[error("policy misconfigured: {0}")]
    Configuration(String),
}

/// One planned time step: a step-level action label and one item per user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepPlan {
    pub action: ActionKind,
    pub items: Vec<usize>,
}

impl StepPlan {
    pub fn is_joint(&self) -> bool {
        self.action == ActionKind::JointExplore
    }
}

pub trait Policy {
    /// Stable identifier used in configs and output files.
    fn name(&self) -> &'static str;

    /// Plan recommendations for the upcoming step (step index `state.t() + 1`).
    fn plan(&self, state: &SessionState) -> Result<StepPlan, PolicyError>;
}

/// Uniform draw over a user's unconsumed items. Rejection-samples against
/// the consumed set (uniform and allocation-free while items are plentiful)
/// and falls back to an explicit list when the set is nearly exhausted.
pub(crate) fn random_unconsumed(
    state: &SessionState,
    user: usize,
    rng: &mut crate::rng::SimRng,
) -> Result<usize, PolicyError> {
    let m = state.num_items();
    if state.consumed_count(user) < m {
        for _ in 0..64 {
            let i = rng.gen_range(m);
            if !state.is_consumed(user, i) {
                return Ok(i);
            }
        }
    }
    let choices: Vec<usize> = state.unconsumed_items(user).collect();
    if choices.is_empty() {
        return Err(PolicyError::Exhausted { user });
    }
    Ok(choices[rng.gen_range(choices.len())])
}
