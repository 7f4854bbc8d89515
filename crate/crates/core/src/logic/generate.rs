// SPDX-License-Identifier: MIT OR Apache-2.0

//! Random problem generation with the ambiguity filter.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{closure, derive_chain, LogicError, Premise, PremiseSet, Problem, Rule, TraversalPolicy};
use crate::seeding::rng_from_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Inclusive bounds on facts + rules.
    pub min_total: usize,
    pub max_total: usize,
    pub alphabet: Vec<Premise>,
    /// Minimum gold-chain length under `policy`.
    pub min_chain_len: usize,
    pub policy: TraversalPolicy,
    /// Probability that a conditional rule has two conditions.
    pub two_condition_prob: f64,
    /// Probability that a condition is drawn from premises already reachable.
    pub reachable_bias: f64,
    pub max_attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            min_total: 8,
            max_total: 18,
            alphabet: Premise::alphabet(),
            min_chain_len: 2,
            policy: TraversalPolicy::default(),
            two_condition_prob: 0.45,
            reachable_bias: 0.6,
            max_attempts: 1000,
        }
    }
}

impl GenConfig {
    fn check(&self) -> Result<(), LogicError> {
        if self.min_total < 2 || self.min_total > self.max_total {
            return Err(LogicError::Malformed(format!(
                "rule bounds [{}, {}] are invalid",
                self.min_total, self.max_total
            )));
        }
        if self.alphabet.len() < 4 {
            return Err(LogicError::Malformed("alphabet needs at least 4 letters".into()));
        }
        Ok(())
    }
}

/// Draws an unambiguous problem: the question is provable by forward
/// chaining and its gold chain has at least `min_chain_len` steps.
/// Deterministic in `seed`.
pub fn generate_problem(seed: u64, config: &GenConfig) -> Result<Problem, LogicError> {
    config.check()?;
    let mut rng = rng_from_seed(seed);
    for _ in 0..config.max_attempts {
        if let Some(p) = try_generate(&mut rng, config) {
            return Ok(p);
        }
    }
    Err(LogicError::GenerationExhausted { attempts: config.max_attempts })
}

fn try_generate(rng: &mut impl Rng, config: &GenConfig) -> Option<Problem> {
    let alphabet = &config.alphabet;
    let total = rng.gen_range(config.min_total..=config.max_total);
    let max_facts = (total / 3).clamp(1, alphabet.len() - 1);
    let n_facts = rng.gen_range(1.max(max_facts.min(2))..=max_facts);
    let facts: Vec<Premise> = alphabet.choose_multiple(rng, n_facts).copied().collect();

    let mut reachable: PremiseSet = facts.iter().copied().collect();
    let mut conditionals: Vec<(Vec<Premise>, Premise)> = Vec::new();
    let mut guard = 0;
    while conditionals.len() < total - n_facts {
        guard += 1;
        if guard > 50 * total {
            return None;
        }
        let arity = if rng.gen_bool(config.two_condition_prob) { 2 } else { 1 };
        let mut conds = Vec::with_capacity(arity);
        while conds.len() < arity {
            let c = if rng.gen_bool(config.reachable_bias) {
                let pool: Vec<Premise> = reachable.iter().collect();
                *pool.choose(rng)?
            } else {
                *alphabet.choose(rng)?
            };
            if !conds.contains(&c) {
                conds.push(c);
            }
        }
        let concl = *alphabet.choose(rng)?;
        if conds.contains(&concl) {
            continue;
        }
        let cand = Rule::new(0, conds.clone(), concl);
        if conditionals.iter().any(|(c, d)| cand.same_content(&Rule::new(0, c.clone(), *d))) {
            continue;
        }
        if conds.iter().all(|&c| reachable.contains(c)) {
            reachable.insert(concl);
        }
        conditionals.push((conds, concl));
    }
    conditionals.shuffle(rng);

    let facts_first = rng.gen_bool(0.5);
    let mut specs: Vec<(Vec<Premise>, Premise)> = Vec::with_capacity(total);
    let fact_specs = facts.iter().map(|&f| (Vec::new(), f));
    if facts_first {
        specs.extend(fact_specs);
        specs.extend(conditionals);
    } else {
        specs.extend(conditionals);
        specs.extend(fact_specs);
    }
    let rules: Vec<Rule> =
        specs.into_iter().enumerate().map(|(i, (c, d))| Rule::new(i as u32 + 1, c, d)).collect();

    let provable = closure(&rules);
    let fact_set: PremiseSet = facts.iter().copied().collect();
    let mut candidates: Vec<Premise> = provable.iter().filter(|p| !fact_set.contains(*p)).collect();
    candidates.shuffle(rng);
    for q in candidates {
        let problem = Problem { rules: rules.clone(), question: q };
        let Ok(chain) = derive_chain(&problem, &config.policy) else { continue };
        if chain.len() >= config.min_chain_len && problem.validate().is_ok() {
            return Some(problem);
        }
    }
    None
}
