// SPDX-License-Identifier: MIT OR Apache-2.0

//! Symbolic-aided chain-of-thought prompt grammar.
//!
//! A shot renders a problem and its chain as:
//!
//! ```text
//! ### Given list of facts and rules:
//! # (Rule1): If L then J
//! # (Rule2): S is true
//! # (Question): truth value of J?
//! # (Answer): Start from the object mentioned in the question: J
//! KB = {S}
//! => F(KB['S'], Rule3) => `L`
//! KB = {S, L}
//! => Validate(KB, Question=`J`) = True.
//! ```
//!
//! Shots are joined by a `-------` line. There is no trailing newline after
//! the final line. The grammar is ASCII-only, so byte offsets and character
//! offsets coincide.

mod dataset;
mod parse;
mod render;
mod tagger;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::logic::{Problem, ReasoningChain, TraversalPolicy};

pub use dataset::{
    read_dataset, read_jsonl, synth_dataset, synth_doc, synth_doc_filtered, synth_record, write_dataset, write_jsonl, DatasetRecord, SynthConfig,
    SynthError,
};
pub use parse::{parse_chain, parse_problem, parse_shot, split_shots, ParseError, ParseIssue, ParseReport};
pub use render::{render_prompt, render_shot, shot_layout, ShotLayout};
pub use tagger::tag_roles;

/// Line separating consecutive shots.
pub const SEPARATOR: &str = "\n-------\n";

/// Default demonstration counts.
pub const DEFAULT_SHOT_COUNTS: [usize; 5] = [2, 3, 5, 7, 9];

/// Reasoning-component category of a character.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Syntax,
    PremiseInKb,
    PremiseSelection,
    PremiseSelectionTermination,
    RuleSelection,
    FactDerivation,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Syntax,
        Role::PremiseInKb,
        Role::PremiseSelection,
        Role::PremiseSelectionTermination,
        Role::RuleSelection,
        Role::FactDerivation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::Syntax => "syntax",
            Role::PremiseInKb => "premise_in_kb",
            Role::PremiseSelection => "premise_selection",
            Role::PremiseSelectionTermination => "premise_selection_termination",
            Role::RuleSelection => "rule_selection",
            Role::FactDerivation => "fact_derivation",
        }
    }
}

/// A run of characters sharing one role. `step_index` is the inference step
/// for step components, the number of preceding steps for KB snapshot
/// premises, and `None` for syntax.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct RoleSpan {
    pub role: Role,
    pub start: usize,
    pub end: usize,
    pub shot_index: usize,
    pub step_index: Option<usize>,
}

impl RoleSpan {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Where to stop rendering a shot.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "at", rename_all = "snake_case")]
pub enum Cutoff {
    #[default]
    Full,
    /// Problem statement only, ending with the answer line's newline.
    Problem,
    /// First `n` bytes of the full shot.
    Byte(usize),
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct PromptShot {
    pub problem: Problem,
    pub chain: ReasoningChain,
    #[serde(default)]
    pub cutoff: Cutoff,
    pub text: String,
}

/// A rendered k-shot prompt: `k` demonstrations followed by one query shot.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct PromptDoc {
    pub shots: Vec<PromptShot>,
    pub text: String,
    pub spans: Vec<RoleSpan>,
    pub k: usize,
    #[serde(default)]
    pub policy: TraversalPolicy,
}

impl PromptDoc {
    pub fn query(&self) -> &PromptShot {
        self.shots.last().expect("a prompt always has a query shot")
    }

    /// Byte offset where each shot starts in `text`.
    pub fn shot_starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.shots.len());
        let mut at = 0;
        for s in &self.shots {
            starts.push(at);
            at += s.text.len() + SEPARATOR.len();
        }
        starts
    }

    pub fn demos(&self) -> Vec<(Problem, ReasoningChain)> {
        self.shots[..self.k].iter().map(|s| (s.problem.clone(), s.chain.clone())).collect()
    }

    /// Role of the character at byte `offset`.
    pub fn role_at(&self, offset: usize) -> Option<&RoleSpan> {
        let i = self.spans.partition_point(|s| s.end <= offset);
        self.spans.get(i).filter(|s| s.start <= offset)
    }
}

/// Fills the gaps between non-syntax spans with syntax runs, splitting runs
/// at shot starts. The separator belongs to the shot before it.
pub(crate) fn fill_syntax(mut spans: Vec<RoleSpan>, text_len: usize, shot_starts: &[usize]) -> Vec<RoleSpan> {
    spans.sort_by_key(|s| s.start);
    let shot_of = |pos: usize| shot_starts.partition_point(|&s| s <= pos).saturating_sub(1);
    let mut out = Vec::with_capacity(spans.len() * 2 + 1);
    let push_gap = |out: &mut Vec<RoleSpan>, from: usize, to: usize| {
        let mut a = from;
        while a < to {
            let shot = shot_of(a);
            let b = shot_starts.get(shot + 1).copied().unwrap_or(usize::MAX).min(to);
            out.push(RoleSpan { role: Role::Syntax, start: a, end: b, shot_index: shot, step_index: None });
            a = b;
        }
    };
    let mut at = 0;
    for s in spans {
        push_gap(&mut out, at, s.start);
        at = s.end;
        out.push(s);
    }
    push_gap(&mut out, at, text_len);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::GenConfig;
    use crate::seeding::derive_seed;

    #[test]
    fn tagger_agrees_with_constructive_spans() {
        for i in 0..100 {
            let k = DEFAULT_SHOT_COUNTS[i % 5];
            let doc = synth_doc(k, derive_seed(5, i as u64), &GenConfig::default()).unwrap();
            assert_eq!(tag_roles(&doc.text), doc.spans, "doc {i}");
            assert_eq!(split_shots(&doc.text).len(), k + 1);
        }
    }

    #[test]
    fn tagger_agrees_on_every_truncation_point() {
        let doc = synth_doc(2, 9, &GenConfig::default()).unwrap();
        let q = doc.query();
        let demos = doc.demos();
        let layout = shot_layout(&q.problem, &q.chain);
        for cut in 0..=layout.text.len() {
            let d = render_prompt(&demos, (&q.problem, &q.chain, Cutoff::Byte(cut)), doc.policy);
            assert!(doc.text.starts_with(&d.text));
            assert_eq!(tag_roles(&d.text), d.spans, "cut {cut}");
        }
    }

    #[test]
    fn role_at_finds_covering_span() {
        let doc = synth_doc(2, 1, &GenConfig::default()).unwrap();
        for s in &doc.spans {
            assert_eq!(doc.role_at(s.start), Some(s));
            assert_eq!(doc.role_at(s.end - 1), Some(s));
        }
        assert_eq!(doc.role_at(doc.text.len()), None);
        assert_eq!(doc.shot_starts().len(), 3);
    }
}
