// SPDX-License-Identifier: MIT OR Apache-2.0

//! Clean/corrupted prompt pairs.
//!
//! A pair shares every byte except inside its causal spans, and both prompts
//! stop right before the same component character. Edits are length
//! preserving so character positions line up across the pair.

mod edits;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logic::{validate_chain, GenConfig};
use crate::promptgen::{parse_chain, parse_problem, parse_shot, split_shots, synth_doc, synth_doc_filtered, PromptDoc};
use crate::seeding::{derive_seed, rng_from_seed};

pub use edits::{corrupt_fact, corrupt_rule_condition, corrupt_rule_termination, corrupt_traversal, traversal_parity};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionType {
    /// Modify a used fact; probes premise selection.
    C1,
    /// Retarget a rule so a second premise is needed; probes selection termination.
    C2,
    /// Replace a fired rule's condition; probes rule selection.
    C3,
    /// Switch the demonstrations' traversal order; probes premise selection.
    C4,
}

impl CorruptionType {
    pub const ALL: [CorruptionType; 4] = [Self::C1, Self::C2, Self::C3, Self::C4];

    pub fn name(self) -> &'static str {
        match self {
            Self::C1 => "c1_fact_premise_selection",
            Self::C2 => "c2_rule_termination",
            Self::C3 => "c3_rule_rule_selection",
            Self::C4 => "c4_traversal_premise_selection",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Self::C1 => 0xC1,
            Self::C2 => 0xC2,
            Self::C3 => 0xC3,
            Self::C4 => 0xC4,
        }
    }
}

impl fmt::Display for CorruptionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::C1 => "c1",
            Self::C2 => "c2",
            Self::C3 => "c3",
            Self::C4 => "c4",
        };
        f.write_str(s)
    }
}

impl FromStr for CorruptionType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "c1" => Ok(Self::C1),
            "c2" => Ok(Self::C2),
            "c3" => Ok(Self::C3),
            "c4" => Ok(Self::C4),
            _ => Err(format!("unknown corruption type {s:?}")),
        }
    }
}

/// A structure-aligned clean/corrupted pair. Offsets are bytes into the
/// prompt texts, which are ASCII.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub clean: PromptDoc,
    pub corrupted: PromptDoc,
    pub kind: CorruptionType,
    pub causal_spans: Vec<Range<usize>>,
    pub component_span: Range<usize>,
    pub preceding_char: usize,
    pub clean_target: String,
    pub corrupted_target: String,
    /// Query step whose component is probed.
    pub step_index: usize,
}

impl PromptPair {
    pub fn to_record(&self, seed: u64, attempt: usize) -> PairRecord {
        PairRecord {
            id: format!("{}-s{}-a{:05}", self.kind, seed, attempt),
            kind: self.kind,
            clean_text: self.clean.text.clone(),
            corrupted_text: self.corrupted.text.clone(),
            causal_spans: self.causal_spans.iter().map(|r| [r.start, r.end]).collect(),
            component_span: [self.component_span.start, self.component_span.end],
            preceding_char: self.preceding_char,
            clean_target: self.clean_target.clone(),
            corrupted_target: self.corrupted_target.clone(),
            seed,
            attempt,
        }
    }
}

/// One line of a pair file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub kind: CorruptionType,
    pub clean_text: String,
    pub corrupted_text: String,
    pub causal_spans: Vec<[usize; 2]>,
    /// `[start, end)` of the component in the full (untruncated) text.
    pub component_span: [usize; 2],
    pub preceding_char: usize,
    pub clean_target: String,
    pub corrupted_target: String,
    pub seed: u64,
    pub attempt: usize,
}

/// Why a pair failed [`check_structure`].
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum StructureError {
    #[error("texts differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("byte {0} differs outside the causal spans")]
    OutsideSpans(usize),
    #[error("component span {0:?} does not start at the truncation point")]
    Component([usize; 2]),
    #[error("preceding char {0} is not the byte before the component")]
    Preceding(usize),
    #[error("targets are empty or equal")]
    Targets,
    #[error("{side} shot {shot}: {reason}")]
    Chain { side: &'static str, shot: usize, reason: String },
}

/// Structural checks on a pair record. Both texts are re-parsed and every
/// visible chain is scored by the oracle against its own side's problem.
pub fn check_structure(pair: &PairRecord) -> Result<(), StructureError> {
    let (a, b) = (pair.clean_text.as_bytes(), pair.corrupted_text.as_bytes());
    if a.len() != b.len() || a.is_empty() {
        return Err(StructureError::Length(a.len(), b.len()));
    }
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x != y && !pair.causal_spans.iter().any(|[s, e]| (*s..*e).contains(&i)) {
            return Err(StructureError::OutsideSpans(i));
        }
    }
    let [cs, ce] = pair.component_span;
    if cs != a.len() || ce <= cs {
        return Err(StructureError::Component(pair.component_span));
    }
    if pair.preceding_char + 1 != cs {
        return Err(StructureError::Preceding(pair.preceding_char));
    }
    if pair.clean_target.is_empty() || pair.corrupted_target.is_empty() || pair.clean_target == pair.corrupted_target {
        return Err(StructureError::Targets);
    }
    check_side("clean", &pair.clean_text)?;
    check_side("corrupted", &pair.corrupted_text)
}

pub fn validate_structure(pair: &PairRecord) -> bool {
    check_structure(pair).is_ok()
}

fn check_side(side: &'static str, text: &str) -> Result<(), StructureError> {
    let shots = split_shots(text);
    let last = shots.len() - 1;
    let err = |shot: usize, reason: String| StructureError::Chain { side, shot, reason };
    for (i, shot) in shots.iter().enumerate() {
        if i < last {
            let (problem, chain, report) = parse_shot(shot).map_err(|e| err(i, e.to_string()))?;
            if !report.is_clean() {
                return Err(err(i, format!("{:?}", report.issues)));
            }
            let v = validate_chain(&problem, &chain);
            if !v.all_valid() || !v.final_verdict || !chain.verdict {
                return Err(err(i, "demonstration chain fails the oracle".into()));
            }
        } else {
            let problem = parse_problem(shot).map_err(|e| err(i, e.to_string()))?;
            // drop the partial line that ends at the component
            let visible = &shot[..shot.rfind('\n').unwrap_or(0)];
            let (chain, report) = parse_chain(visible, &problem);
            if !report.is_clean() {
                return Err(err(i, format!("{:?}", report.issues)));
            }
            if !validate_chain(&problem, &chain).all_valid() {
                return Err(err(i, "visible query chain fails the oracle".into()));
            }
        }
    }
    Ok(())
}

/// Applies one corruption procedure, drawing its random choices from `rng`.
/// Returns `None` when this document admits no valid edit of that kind.
pub fn corrupt(doc: &PromptDoc, kind: CorruptionType, rng: &mut impl Rng) -> Option<PromptPair> {
    match kind {
        CorruptionType::C1 => edits::random_c1(doc, rng),
        CorruptionType::C2 => edits::random_c2(doc, rng),
        CorruptionType::C3 => edits::random_c3(doc, rng),
        CorruptionType::C4 => corrupt_traversal(doc),
    }
}

#[derive(Debug, Error)]
pub enum CounterfactualError {
    #[error("only {produced} of {requested} pairs after {attempts} attempts")]
    InsufficientYield { requested: usize, produced: usize, attempts: usize, pairs: Vec<PairRecord> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pub kind: CorruptionType,
    pub pairs: Vec<PairRecord>,
    /// Attempts consumed to reach the last accepted pair (or the budget).
    pub attempts: usize,
}

impl PairSet {
    pub fn yield_ratio(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.pairs.len() as f64 / self.attempts as f64
        }
    }
}

/// One attempt of the generation loop: draw a k-shot document and try the edit.
pub fn attempt_pair(k: usize, kind: CorruptionType, seed: u64, attempt: usize, gen: &GenConfig) -> Option<PairRecord> {
    let doc_seed = derive_seed(seed, attempt as u64);
    let doc = match kind {
        // demonstrations must survive the traversal swap, so draw them that way
        CorruptionType::C4 => synth_doc_filtered(k, doc_seed, gen, &|p, c| traversal_parity(p, c, gen.policy)),
        _ => synth_doc(k, doc_seed, gen),
    }
    .ok()?;
    let mut rng = rng_from_seed(derive_seed(doc_seed ^ kind.salt(), u64::MAX));
    let pair = corrupt(&doc, kind, &mut rng)?;
    let rec = pair.to_record(seed, attempt);
    validate_structure(&rec).then_some(rec)
}

/// Generation loop with a budget of `10 n` attempts. Attempts run in
/// parallel batches and are collated by attempt index, so the result equals
/// a sequential run.
pub fn generate_pairs(
    n: usize,
    k: usize,
    kind: CorruptionType,
    seed: u64,
    gen: &GenConfig,
) -> Result<PairSet, CounterfactualError> {
    let budget = 10 * n;
    let batch = rayon::current_num_threads().max(1) * 8;
    let mut pairs = Vec::with_capacity(n);
    let mut attempts = 0;
    let mut next = 0;
    while pairs.len() < n && next < budget {
        let end = (next + batch).min(budget);
        let results: Vec<Option<PairRecord>> =
            (next..end).into_par_iter().map(|a| attempt_pair(k, kind, seed, a, gen)).collect();
        for (a, r) in (next..end).zip(results) {
            attempts = a + 1;
            if let Some(r) = r {
                pairs.push(r);
                if pairs.len() == n {
                    break;
                }
            }
        }
        next = end;
    }
    if pairs.len() < n {
        return Err(CounterfactualError::InsufficientYield { requested: n, produced: pairs.len(), attempts, pairs });
    }
    Ok(PairSet { kind, pairs, attempts })
}
