//! Simulation engine and policy library for online collaborative filtering
//! under a latent source model.
//!
//! What lives here:
//!
//! * [`latent_model`] -- latent type populations (preference vectors,
//!   assignments) and their scalar summaries (margin, incoherence, mu);
//! * [`sim_state`] -- the mutable session: revealed ratings, consumed sets,
//!   the shared exploration ordering, no-repeat enforcement;
//! * [`collab_greedy`] -- the Collaborative-Greedy policy (cosine
//!   neighborhoods, plurality scores, two exploration types);
//! * [`baselines`] -- oracle, uniform-random, and popularity-vote policies
//!   behind the same [`policy::Policy`] interface;
//! * [`simulator`] -- the time-stepped environment loop and metrics
//!   (per-step reward and likable counts);
//! * [`data_ingest`] -- building replay matrices from raw star-rating dumps
//!   (dense top-users-by-top-items submatrix, quantization);
//! * [`theory_checks`] -- closed-form learning-time and tail-bound formulas
//!   plus Monte Carlo validators for them.
//!
//! Everything is deterministic given a single `u64` seed; see [`rng`].

pub mod baselines;
pub mod collab_greedy;
pub mod data_ingest;
pub mod latent_model;
pub mod policy;
pub mod rng;
pub mod sim_state;
pub mod simulator;
pub mod theory_checks;
