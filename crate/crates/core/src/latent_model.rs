//! Latent source populations.
//!
//! A population is `k` item-preference probability vectors (one per user
//! type) plus an assignment of `n` users to types. Item `i` is *likable*
//! for a user when their type's probability `p_i` is strictly above 1/2.
//! Two scalar summaries matter downstream:
//!
//! * the margin check: no entry within `delta` of 1/2 (no ambiguous items);
//! * `gamma_hat`: the smallest incoherence constant under which every
//!   cross-type pair satisfies `(1/m) <2p_u - 1, 2p_v - 1> <= 4 * gamma * delta^2`.

use crate::rng::{stream, SimRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),
    #[error("invalid configuration: {0}")]
    Configuration(String),
    #[error("margin delta must be positive to evaluate incoherence")]
    ZeroMargin,
}

/// Item-preference probabilities for one user type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PreferenceVector {
    probs: Vec<f64>,
}

impl PreferenceVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, ModelError> {
        if probs.is_empty() {
            return Err(ModelError::Configuration("empty preference vector".into()));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(ModelError::ParameterDomain(format!(
                    "preference entry {i} = {p} outside [0,1]"
                )));
            }
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Number of entries strictly above 1/2.
    pub fn likable_count(&self) -> usize {
        self.probs.iter().filter(|&&p| p > 0.5).count()
    }
}

/// How user types are assigned to users.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMode {
    /// Each user's type drawn independently and uniformly from the k types.
    Uniform,
    /// Round-robin assignment; deterministic and exactly balanced. Test aid.
    Balanced,
}

/// Entry layout of the generated preference vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenScheme {
    /// Entries in {0, 1}: ratings are deterministic given the type.
    Noiseless,
    /// Entries in {1/2 - delta, 1/2 + delta}, equiprobable.
    Symmetric,
    /// Entry is 1/2 + delta with probability `mu_target`, else 1/2 - delta.
    Biased,
}

/// Parameters for [`generate_population`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationParams {
    pub num_types: usize,
    pub num_items: usize,
    pub num_users: usize,
    pub margin: f64,
    /// Likable-entry probability for [`GenScheme::Biased`]; ignored otherwise.
    pub mu_target: f64,
    pub scheme: GenScheme,
    pub assignment: AssignmentMode,
    pub seed: u64,
}

impl PopulationParams {
    pub fn new(
        num_types: usize,
        num_items: usize,
        num_users: usize,
        margin: f64,
        scheme: GenScheme,
        seed: u64,
    ) -> Self {
        Self {
            num_types,
            num_items,
            num_users,
            margin,
            mu_target: 0.5,
            scheme,
            assignment: AssignmentMode::Uniform,
            seed,
        }
    }
}

/// A latent source population: k preference vectors, a user-to-type
/// assignment, and the declared margin `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    sources: Vec<PreferenceVector>,
    assignment: Vec<usize>,
    delta: f64,
    seed: u64,
}

/// Wire layout of a population config: `{k, m, n, delta, sources, assignment, seed}`.
#[derive(Serialize, Deserialize)]
struct PopulationJson {
    k: usize,
    m: usize,
    n: usize,
    delta: f64,
    sources: Vec<Vec<f64>>,
    assignment: Vec<usize>,
    seed: u64,
}

impl Population {
    /// Build a population from explicit parts, validating every invariant.
    pub fn from_parts(
        sources: Vec<PreferenceVector>,
        assignment: Vec<usize>,
        delta: f64,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if sources.is_empty() {
            return Err(ModelError::Configuration("population needs at least one source".into()));
        }
        let m = sources[0].len();
        if sources.iter().any(|s| s.len() != m) {
            return Err(ModelError::Configuration("sources have differing lengths".into()));
        }
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(ModelError::ParameterDomain(format!(
                "delta = {delta} outside (0, 1/2]"
            )));
        }
        let k = sources.len();
        if let Some(&bad) = assignment.iter().find(|&&ty| ty >= k) {
            return Err(ModelError::Configuration(format!(
                "assignment references type {bad} but only {k} sources exist"
            )));
        }
        Ok(Self { sources, assignment, delta, seed })
    }

    pub fn num_types(&self) -> usize {
        self.sources.len()
    }

    pub fn num_items(&self) -> usize {
        self.sources[0].len()
    }

    pub fn num_users(&self) -> usize {
        self.assignment.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sources(&self) -> &[PreferenceVector] {
        &self.sources
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn type_of(&self, user: usize) -> usize {
        self.assignment[user]
    }

    /// Like-probability of item `i` for user `u`.
    pub fn prob(&self, user: usize, item: usize) -> f64 {
        self.sources[self.assignment[user]].probs[item]
    }

    /// Ground-truth likability of item `i` for user `u` (strict `p > 1/2`).
    pub fn is_likable(&self, user: usize, item: usize) -> bool {
        self.prob(user, item) > 0.5
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(PopulationJson {
            k: self.num_types(),
            m: self.num_items(),
            n: self.num_users(),
            delta: self.delta,
            sources: self.sources.iter().map(|s| s.probs.clone()).collect(),
            assignment: self.assignment.clone(),
            seed: self.seed,
        })
        .expect("population serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, ModelError> {
        let raw: PopulationJson = serde_json::from_value(value.clone())
            .map_err(|e| ModelError::Configuration(format!("population json: {e}")))?;
        if raw.sources.len() != raw.k {
            return Err(ModelError::Configuration(format!(
                "k = {} but {} sources given",
                raw.k,
                raw.sources.len()
            )));
        }
        if raw.assignment.len() != raw.n {
            return Err(ModelError::Configuration(format!(
                "n = {} but {} assignments given",
                raw.n,
                raw.assignment.len()
            )));
        }
        let sources = raw
            .sources
            .into_iter()
            .map(|probs| {
                let pv = PreferenceVector::new(probs)?;
                if pv.len() != raw.m {
                    return Err(ModelError::Configuration(format!(
                        "m = {} but a source has {} entries",
                        raw.m,
                        pv.len()
                    )));
                }
                Ok(pv)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_parts(sources, raw.assignment, raw.delta, raw.seed)
    }
}

/// Draw a population under the requested scheme. Deterministic given the
/// parameter set (including the seed).
pub fn generate_population(params: &PopulationParams) -> Result<Population, ModelError> {
    let PopulationParams {
        num_types: k,
        num_items: m,
        num_users: n,
        margin: delta,
        mu_target,
        scheme,
        assignment,
        seed,
    } = *params;

    if k < 1 || m < 1 {
        return Err(ModelError::Configuration(format!(
            "need at least one type and one item (k = {k}, m = {m})"
        )));
    }
    if n < k {
        return Err(ModelError::Configuration(format!(
            "need at least as many users as types (n = {n}, k = {k})"
        )));
    }
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(ModelError::ParameterDomain(format!("delta = {delta} outside (0, 1/2]")));
    }
    if scheme == GenScheme::Biased && !(mu_target > 0.0 && mu_target <= 0.5) {
        return Err(ModelError::ParameterDomain(format!(
            "mu_target = {mu_target} outside (0, 1/2]"
        )));
    }

    let mut src_rng = SimRng::for_stream(seed, &[stream::POPULATION, 1]);
    let sources = (0..k)
        .map(|_| {
            let probs = (0..m)
                .map(|_| match scheme {
                    GenScheme::Noiseless => {
                        if src_rng.gen_bool(0.5) {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    GenScheme::Symmetric => {
                        if src_rng.gen_bool(0.5) {
                            0.5 + delta
                        } else {
                            0.5 - delta
                        }
                    }
                    GenScheme::Biased => {
                        if src_rng.gen_bool(mu_target) {
                            0.5 + delta
                        } else {
                            0.5 - delta
                        }
                    }
                })
                .collect();
            PreferenceVector { probs }
        })
        .collect();

    let mut assign_rng = SimRng::for_stream(seed, &[stream::POPULATION, 2]);
    let assignment = match assignment {
        AssignmentMode::Uniform => (0..n).map(|_| assign_rng.gen_range(k)).collect(),
        AssignmentMode::Balanced => (0..n).map(|u| u % k).collect(),
    };

    Population::from_parts(sources, assignment, delta, seed)
}

/// True iff every entry of every source is at least `delta` away from 1/2.
pub fn check_no_ambiguous(pop: &Population, delta: f64) -> bool {
    pop.sources
        .iter()
        .flat_map(|s| s.probs.iter())
        .all(|&p| (p - 0.5).abs() >= delta)
}

/// Smallest incoherence constant for which every cross-type pair satisfies
/// the separation condition: the max over unordered source pairs of
/// `(1/m) <2p_u - 1, 2p_v - 1> / (4 delta^2)`. By convention 0 for k = 1
/// (no cross-type pair exists). May be negative for anti-aligned sources.
pub fn compute_gamma_hat(pop: &Population) -> Result<f64, ModelError> {
    if pop.delta <= 0.0 {
        return Err(ModelError::ZeroMargin);
    }
    let k = pop.num_types();
    if k < 2 {
        return Ok(0.0);
    }
    let m = pop.num_items() as f64;
    let norm = 4.0 * pop.delta * pop.delta;
    let mut best = f64::NEG_INFINITY;
    for a in 0..k {
        for b in (a + 1)..k {
            let dot: f64 = pop.sources[a]
                .probs
                .iter()
                .zip(&pop.sources[b].probs)
                .map(|(&pa, &pb)| (2.0 * pa - 1.0) * (2.0 * pb - 1.0))
                .sum();
            best = best.max(dot / m / norm);
        }
    }
    Ok(best)
}

/// Minimum, over types with at least one assigned user, of the fraction of
/// entries strictly greater than 1/2.
pub fn compute_mu(pop: &Population) -> f64 {
    let m = pop.num_items() as f64;
    let mut represented = vec![false; pop.num_types()];
    for &ty in &pop.assignment {
        represented[ty] = true;
    }
    pop.sources
        .iter()
        .zip(&represented)
        .filter(|(_, &rep)| rep)
        .map(|(s, _)| s.likable_count() as f64 / m)
        .fold(f64::INFINITY, f64::min)
        .clamp(0.0, 1.0) // empty assignment degenerates to 1
}

/// Scalar summaries of a population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub mu: f64,
    pub gamma_hat: f64,
    pub margin_ok: bool,
}

pub fn summarize(pop: &Population) -> Result<ModelSummary, ModelError> {
    Ok(ModelSummary {
        mu: compute_mu(pop),
        gamma_hat: compute_gamma_hat(pop)?,
        margin_ok: check_no_ambiguous(pop, pop.delta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(xs: &[f64]) -> PreferenceVector {
        PreferenceVector::new(xs.to_vec()).unwrap()
    }

    fn single_type_pop(xs: &[f64], n: usize, delta: f64) -> Population {
        Population::from_parts(vec![pv(xs)], vec![0; n], delta, 0).unwrap()
    }

    #[test]
    fn noiseless_single_type_entries_in_zero_one() {
        let params = PopulationParams::new(1, 4, 2, 0.5, GenScheme::Noiseless, 7);
        let pop = generate_population(&params).unwrap();
        assert_eq!(pop.assignment(), &[0, 0]);
        for s in pop.sources() {
            for &p in s.probs() {
                assert!(p == 0.0 || p == 1.0);
            }
        }
    }

    #[test]
    fn symmetric_entries_take_exactly_two_values() {
        let params = PopulationParams::new(2, 8, 4, 0.3, GenScheme::Symmetric, 11);
        let pop = generate_population(&params).unwrap();
        for s in pop.sources() {
            for &p in s.probs() {
                assert!(p == 0.5 - 0.3 || p == 0.5 + 0.3, "unexpected entry {p}");
            }
        }
    }

    #[test]
    fn biased_likable_fraction_concentrates() {
        let mut params = PopulationParams::new(2, 10_000, 4, 0.25, GenScheme::Biased, 1);
        params.mu_target = 0.3;
        let pop = generate_population(&params).unwrap();
        // Oracle: count likable entries directly per source.
        for s in pop.sources() {
            let frac = s.likable_count() as f64 / 10_000.0;
            assert!((frac - 0.3).abs() <= 0.02, "likable fraction {frac} far from 0.3");
        }
    }

    #[test]
    fn generation_is_bitwise_deterministic() {
        let params = PopulationParams::new(3, 50, 20, 0.4, GenScheme::Symmetric, 99);
        assert_eq!(generate_population(&params).unwrap(), generate_population(&params).unwrap());
    }

    #[test]
    fn balanced_assignment_round_robins() {
        let mut params = PopulationParams::new(3, 5, 7, 0.4, GenScheme::Noiseless, 1);
        params.assignment = AssignmentMode::Balanced;
        let pop = generate_population(&params).unwrap();
        assert_eq!(pop.assignment(), &[0, 1, 2, 0, 1, 2, 0]);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let bad_delta = PopulationParams::new(1, 4, 2, 0.0, GenScheme::Symmetric, 0);
        assert!(matches!(generate_population(&bad_delta), Err(ModelError::ParameterDomain(_))));
        let bad_delta2 = PopulationParams::new(1, 4, 2, 0.6, GenScheme::Symmetric, 0);
        assert!(matches!(generate_population(&bad_delta2), Err(ModelError::ParameterDomain(_))));
        let mut bad_mu = PopulationParams::new(1, 4, 2, 0.3, GenScheme::Biased, 0);
        bad_mu.mu_target = 0.7;
        assert!(matches!(generate_population(&bad_mu), Err(ModelError::ParameterDomain(_))));
        let too_few_users = PopulationParams::new(5, 4, 2, 0.3, GenScheme::Symmetric, 0);
        assert!(matches!(generate_population(&too_few_users), Err(ModelError::Configuration(_))));
    }

    #[test]
    fn noiseless_always_passes_margin_half() {
        for seed in 0..20 {
            let params = PopulationParams::new(2, 40, 4, 0.5, GenScheme::Noiseless, seed);
            let pop = generate_population(&params).unwrap();
            assert!(check_no_ambiguous(&pop, 0.5));
        }
    }

    #[test]
    fn ambiguity_check_cases() {
        assert!(check_no_ambiguous(&single_type_pop(&[0.2, 0.8], 1, 0.3), 0.3));
        assert!(!check_no_ambiguous(&single_type_pop(&[0.5], 1, 0.1), 0.1));
        // 0.55 is only 0.05 from 1/2, short of the 0.1 margin.
        assert!(!check_no_ambiguous(&single_type_pop(&[0.55, 0.9], 1, 0.1), 0.1));
    }

    #[test]
    fn gamma_hat_orthogonal_sources_is_zero() {
        let pop = Population::from_parts(
            vec![pv(&[0.75, 0.75, 0.25, 0.25]), pv(&[0.75, 0.25, 0.75, 0.25])],
            vec![0, 1],
            0.25,
            0,
        )
        .unwrap();
        // Hand dot product: (.5)(.5) + (.5)(-.5) + (-.5)(.5) + (-.5)(-.5) = 0.
        assert_eq!(compute_gamma_hat(&pop).unwrap(), 0.0);
    }

    #[test]
    fn gamma_hat_duplicate_sources_is_one() {
        let v = pv(&[0.75, 0.25, 0.75, 0.25]);
        let pop = Population::from_parts(vec![v.clone(), v], vec![0, 1], 0.25, 0).unwrap();
        assert_eq!(compute_gamma_hat(&pop).unwrap(), 1.0);
    }

    #[test]
    fn gamma_hat_anti_aligned_sources_is_minus_one() {
        let a = pv(&[0.75, 0.25, 0.75, 0.25]);
        let b = pv(&[0.25, 0.75, 0.25, 0.75]);
        let pop = Population::from_parts(vec![a, b], vec![0, 1], 0.25, 0).unwrap();
        assert_eq!(compute_gamma_hat(&pop).unwrap(), -1.0);
    }

    #[test]
    fn gamma_hat_single_type_is_zero_by_convention() {
        let pop = single_type_pop(&[0.8, 0.2], 3, 0.3);
        assert_eq!(compute_gamma_hat(&pop).unwrap(), 0.0);
    }

    #[test]
    fn gamma_hat_invariant_to_permuting_sources_and_items() {
        let a = pv(&[0.8, 0.2, 0.8, 0.2, 0.2]);
        let b = pv(&[0.8, 0.8, 0.2, 0.2, 0.8]);
        let c = pv(&[0.2, 0.8, 0.2, 0.8, 0.8]);
        let pop1 = Population::from_parts(vec![a.clone(), b.clone(), c.clone()], vec![0, 1, 2], 0.3, 0)
            .unwrap();
        let pop2 =
            Population::from_parts(vec![c.clone(), a.clone(), b.clone()], vec![0, 1, 2], 0.3, 0).unwrap();
        let g1 = compute_gamma_hat(&pop1).unwrap();
        assert_eq!(g1, compute_gamma_hat(&pop2).unwrap());

        // Apply one fixed item permutation to every source.
        let perm = [3usize, 0, 4, 1, 2];
        let permuted = |v: &PreferenceVector| {
            pv(&perm.iter().map(|&i| v.probs()[i]).collect::<Vec<_>>())
        };
        let pop3 = Population::from_parts(
            vec![permuted(&a), permuted(&b), permuted(&c)],
            vec![0, 1, 2],
            0.3,
            0,
        )
        .unwrap();
        assert!((g1 - compute_gamma_hat(&pop3).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn mu_examples() {
        assert_eq!(compute_mu(&single_type_pop(&[0.8, 0.8, 0.2, 0.2], 2, 0.3)), 0.5);
        let pop = Population::from_parts(
            vec![pv(&[0.8, 0.2, 0.2, 0.2]), pv(&[0.8, 0.8, 0.8, 0.2])],
            vec![0, 1],
            0.3,
            0,
        )
        .unwrap();
        assert_eq!(compute_mu(&pop), 0.25);
        assert_eq!(compute_mu(&single_type_pop(&[0.1, 0.4, 0.2], 2, 0.1)), 0.0);
    }

    #[test]
    fn mu_ignores_unrepresented_types() {
        // Type 1 (all likable) has no users; mu comes from type 0 alone.
        let pop = Population::from_parts(
            vec![pv(&[0.8, 0.2]), pv(&[0.9, 0.9])],
            vec![0, 0],
            0.2,
            0,
        )
        .unwrap();
        assert_eq!(compute_mu(&pop), 0.5);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let params = PopulationParams::new(2, 6, 5, 0.4, GenScheme::Symmetric, 3);
        let pop = generate_population(&params).unwrap();
        let json = pop.to_json();
        assert_eq!(json["k"], 2);
        assert_eq!(json["m"], 6);
        assert_eq!(json["n"], 5);
        let back = Population::from_json(&json).unwrap();
        assert_eq!(pop, back);

        let mut bad = json.clone();
        bad["delta"] = serde_json::json!(0.9);
        assert!(Population::from_json(&bad).is_err());
        let mut bad2 = json.clone();
        bad2["assignment"][0] = serde_json::json!(7);
        assert!(Population::from_json(&bad2).is_err());
    }

    #[test]
    fn summary_reports_margin_and_mu() {
        let params = PopulationParams::new(2, 100, 10, 0.3, GenScheme::Symmetric, 5);
        let pop = generate_population(&params).unwrap();
        let s = summarize(&pop).unwrap();
        assert!(s.margin_ok);
        assert!(s.mu > 0.0 && s.mu < 1.0);
    }
}
