// SPDX-License-Identifier: MIT OR Apache-2.0

//! Symbolic deductive world: premises, rules, problems and reasoning chains.
//!
//! Premises are single uppercase letters. A rule with no conditions is a
//! fact ("X is true"); every other rule has one or two conditions and a
//! conclusion. Reasoning chains are sequences of inference steps that each
//! fire one rule against the knowledge base proven so far.

mod generate;
mod traversal;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{generate_problem, GenConfig};
pub use traversal::{derive_chain, firing_order, Traversal, TraversalPolicy};

/// Errors raised by the deductive engine.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogicError {
    #[error("invalid premise {0:?}: expected a single uppercase letter A-Z")]
    InvalidPremise(String),
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("question {0} is not derivable from the rules")]
    NotDerivable(Premise),
    #[error("problem generation exhausted after {attempts} attempts")]
    GenerationExhausted { attempts: usize },
}

// ---------------------------------------------------------------------------
// Premise
// ---------------------------------------------------------------------------

/// A propositional symbol, one uppercase ASCII letter.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Premise(u8);

impl Premise {
    pub fn new(c: char) -> Result<Self, LogicError> {
        if c.is_ascii_uppercase() {
            Ok(Premise(c as u8))
        } else {
            Err(LogicError::InvalidPremise(c.to_string()))
        }
    }

    /// Panics on anything outside `A..=Z`; meant for literals in tests and fixtures.
    pub fn lit(c: char) -> Self {
        Self::new(c).expect("premise literal must be A-Z")
    }

    pub fn as_char(self) -> char {
        self.0 as char
    }

    /// Zero-based alphabet index (`A` = 0).
    pub fn index(self) -> usize {
        (self.0 - b'A') as usize
    }

    pub fn from_index(i: usize) -> Self {
        assert!(i < 26, "premise index out of range");
        Premise(b'A' + i as u8)
    }

    pub fn alphabet() -> Vec<Premise> {
        (0..26).map(Premise::from_index).collect()
    }
}

impl fmt::Debug for Premise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl fmt::Display for Premise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl Serialize for Premise {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut buf = [0u8; 4];
        s.serialize_str(self.as_char().encode_utf8(&mut buf))
    }
}

impl<'de> Deserialize<'de> for Premise {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Premise::new(c).map_err(serde::de::Error::custom),
            _ => Err(serde::de::Error::custom(LogicError::InvalidPremise(s))),
        }
    }
}

/// Small set of premises backed by a 26-bit mask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, Debug)]
pub struct PremiseSet(u32);

impl PremiseSet {
    pub fn new() -> Self {
        Self(0)
    }
    pub fn insert(&mut self, p: Premise) -> bool {
        let bit = 1u32 << p.index();
        let fresh = self.0 & bit == 0;
        self.0 |= bit;
        fresh
    }
    pub fn contains(&self, p: Premise) -> bool {
        self.0 & (1u32 << p.index()) != 0
    }
    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }
    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }
    pub fn iter(&self) -> impl Iterator<Item = Premise> + '_ {
        (0..26).filter(|i| self.0 & (1 << i) != 0).map(Premise::from_index)
    }
}

impl FromIterator<Premise> for PremiseSet {
    fn from_iter<I: IntoIterator<Item = Premise>>(iter: I) -> Self {
        let mut s = PremiseSet::new();
        for p in iter {
            s.insert(p);
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Rules and problems
// ---------------------------------------------------------------------------

/// A fact (no conditions) or a conditional rule with one or two conditions.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Rule {
    pub id: u32,
    pub conditions: Vec<Premise>,
    pub conclusion: Premise,
}

impl Rule {
    pub fn fact(id: u32, p: Premise) -> Self {
        Rule { id, conditions: Vec::new(), conclusion: p }
    }

    pub fn new(id: u32, conditions: Vec<Premise>, conclusion: Premise) -> Self {
        Rule { id, conditions, conclusion }
    }

    pub fn is_fact(&self) -> bool {
        self.conditions.is_empty()
    }

    /// True when this rule has the same conditions (as a set) and conclusion as `other`.
    pub fn same_content(&self, other: &Rule) -> bool {
        self.conclusion == other.conclusion
            && self.conditions.iter().copied().collect::<PremiseSet>()
                == other.conditions.iter().copied().collect::<PremiseSet>()
            && self.conditions.len() == other.conditions.len()
    }
}

/// A deductive problem: interleaved facts and rules plus the queried premise.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Problem {
    pub rules: Vec<Rule>,
    pub question: Premise,
}

impl Problem {
    /// Checks ids are dense from 1, arities are 0-2 with distinct conditions,
    /// and no two rules share the same content.
    pub fn validate(&self) -> Result<(), LogicError> {
        for (i, r) in self.rules.iter().enumerate() {
            if r.id as usize != i + 1 {
                return Err(LogicError::Malformed(format!(
                    "rule at position {} has id {} (ids must be dense from 1)",
                    i, r.id
                )));
            }
            if r.conditions.len() > 2 {
                return Err(LogicError::Malformed(format!("Rule{} has {} conditions", r.id, r.conditions.len())));
            }
            if r.conditions.len() == 2 && r.conditions[0] == r.conditions[1] {
                return Err(LogicError::Malformed(format!("Rule{} repeats a condition", r.id)));
            }
        }
        for (i, a) in self.rules.iter().enumerate() {
            if let Some(b) = self.rules[i + 1..].iter().find(|b| a.same_content(b)) {
                return Err(LogicError::Malformed(format!("Rule{} duplicates Rule{}", b.id, a.id)));
            }
        }
        Ok(())
    }

    pub fn rule(&self, id: u32) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn facts(&self) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(|r| r.is_fact())
    }

    /// Conclusions of the 0-condition rules, in rule-id order.
    pub fn initial_kb(&self) -> KbState {
        let mut kb = KbState::default();
        for f in self.facts() {
            kb.insert(f.conclusion);
        }
        kb
    }

    /// Every letter mentioned anywhere in the problem, question included.
    pub fn letters(&self) -> PremiseSet {
        let mut s = PremiseSet::new();
        s.insert(self.question);
        for r in &self.rules {
            s.insert(r.conclusion);
            for &c in &r.conditions {
                s.insert(c);
            }
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Knowledge base and chains
// ---------------------------------------------------------------------------

/// Insertion-ordered set of proven premises.
#[derive(Clone, Default, PartialEq, Eq, Hash, Debug)]
pub struct KbState {
    order: Vec<Premise>,
    set: PremiseSet,
}

impl KbState {
    pub fn from_premises(ps: impl IntoIterator<Item = Premise>) -> Self {
        let mut kb = KbState::default();
        for p in ps {
            kb.insert(p);
        }
        kb
    }

    /// Returns false when `p` was already proven.
    pub fn insert(&mut self, p: Premise) -> bool {
        if self.set.insert(p) {
            self.order.push(p);
            true
        } else {
            false
        }
    }

    pub fn contains(&self, p: Premise) -> bool {
        self.set.contains(p)
    }

    pub fn premises(&self) -> &[Premise] {
        &self.order
    }

    pub fn as_set(&self) -> PremiseSet {
        self.set
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Position of `p` in derivation order.
    pub fn position(&self, p: Premise) -> Option<usize> {
        self.order.iter().position(|&q| q == p)
    }
}

impl Serialize for KbState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.order.serialize(s)
    }
}

impl<'de> Deserialize<'de> for KbState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<Premise>::deserialize(d)?;
        Ok(KbState::from_premises(v))
    }
}

/// One application of a rule: `F(KB[selected], Rule<id>) => derived`.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct InferenceStep {
    pub selected: Vec<Premise>,
    pub rule_id: u32,
    pub derived: Premise,
    /// The KB snapshot written after the step; `None` when a parsed chain omits it.
    pub kb_after: Option<KbState>,
}

/// A chain line: a well-formed inference step or an unparseable line kept verbatim.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChainStep {
    Inference(InferenceStep),
    Malformed { text: String },
}

impl ChainStep {
    pub fn as_inference(&self) -> Option<&InferenceStep> {
        match self {
            ChainStep::Inference(s) => Some(s),
            ChainStep::Malformed { .. } => None,
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub steps: Vec<ChainStep>,
    pub verdict: bool,
}

impl ReasoningChain {
    pub fn inference_steps(&self) -> impl Iterator<Item = &InferenceStep> {
        self.steps.iter().filter_map(ChainStep::as_inference)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Builds a chain from well-formed steps.
    pub fn from_steps(steps: Vec<InferenceStep>, verdict: bool) -> Self {
        ReasoningChain { steps: steps.into_iter().map(ChainStep::Inference).collect(), verdict }
    }
}

// ---------------------------------------------------------------------------
// Forward chaining
// ---------------------------------------------------------------------------

/// Least fixpoint of forward chaining over `rules`.
///
/// Counter-based propagation: each rule tracks how many of its conditions are
/// still unproven and fires when the count reaches zero.
pub fn closure(rules: &[Rule]) -> PremiseSet {
    let mut proven = PremiseSet::new();
    let mut missing: Vec<usize> = Vec::with_capacity(rules.len());
    let mut watchers: Vec<Vec<usize>> = vec![Vec::new(); 26];
    let mut queue = Vec::new();
    for (i, r) in rules.iter().enumerate() {
        let distinct: PremiseSet = r.conditions.iter().copied().collect();
        missing.push(distinct.len());
        for c in distinct.iter() {
            watchers[c.index()].push(i);
        }
        if distinct.is_empty() && proven.insert(r.conclusion) {
            queue.push(r.conclusion);
        }
    }
    while let Some(p) = queue.pop() {
        for &i in &watchers[p.index()] {
            missing[i] -= 1;
            if missing[i] == 0 && proven.insert(rules[i].conclusion) {
                queue.push(rules[i].conclusion);
            }
        }
    }
    proven
}

/// Rules that could fire now: all conditions proven, conclusion unproven and
/// id not yet used. Returned in ascending id order.
pub fn applicable_rules<'a>(kb: &KbState, rules: &'a [Rule], fired: &[u32]) -> Vec<&'a Rule> {
    let mut out: Vec<&Rule> = rules
        .iter()
        .filter(|r| {
            !fired.contains(&r.id)
                && !kb.contains(r.conclusion)
                && r.conditions.iter().all(|&c| kb.contains(c))
        })
        .collect();
    out.sort_by_key(|r| r.id);
    out
}

// ---------------------------------------------------------------------------
// Chain validation
// ---------------------------------------------------------------------------

/// Per-step verdicts and whether the question ends up proven.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainVerdicts {
    pub step_verdicts: Vec<bool>,
    pub final_verdict: bool,
}

impl ChainVerdicts {
    pub fn all_valid(&self) -> bool {
        self.step_verdicts.iter().all(|&v| v)
    }

    /// Fraction of valid steps, 0 for an empty chain.
    pub fn accuracy(&self) -> f64 {
        if self.step_verdicts.is_empty() {
            0.0
        } else {
            self.step_verdicts.iter().filter(|&&v| v).count() as f64 / self.step_verdicts.len() as f64
        }
    }
}

/// Scores each step of a (possibly model-produced) chain against the problem.
///
/// The KB evolves with every step's derived premise whether or not the step
/// itself was valid, so each verdict is local to its own step.
pub fn validate_chain(problem: &Problem, chain: &ReasoningChain) -> ChainVerdicts {
    let mut kb = problem.initial_kb();
    let mut verdicts = Vec::with_capacity(chain.steps.len());
    for step in &chain.steps {
        let Some(step) = step.as_inference() else {
            verdicts.push(false);
            continue;
        };
        verdicts.push(step_is_valid(problem, &kb, step));
        kb.insert(step.derived);
    }
    ChainVerdicts { step_verdicts: verdicts, final_verdict: kb.contains(problem.question) }
}

fn step_is_valid(problem: &Problem, kb_before: &KbState, step: &InferenceStep) -> bool {
    let Some(rule) = problem.rule(step.rule_id) else {
        return false;
    };
    if rule.is_fact() || step.selected.len() != rule.conditions.len() {
        return false;
    }
    let selected: PremiseSet = step.selected.iter().copied().collect();
    let conditions: PremiseSet = rule.conditions.iter().copied().collect();
    if selected.len() != step.selected.len() || selected != conditions {
        return false;
    }
    if !step.selected.iter().all(|&p| kb_before.contains(p)) {
        return false;
    }
    if step.derived != rule.conclusion || kb_before.contains(step.derived) {
        return false;
    }
    if let Some(kb_after) = &step.kb_after {
        let mut expected = kb_before.as_set();
        expected.insert(step.derived);
        if kb_after.as_set() != expected || kb_after.len() != expected.len() {
            return false;
        }
    }
    true
}
