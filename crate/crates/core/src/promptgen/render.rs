// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt::Write as _;
use std::ops::Range;

use super::{fill_syntax, Cutoff, PromptDoc, PromptShot, Role, RoleSpan, SEPARATOR};
use crate::logic::{ChainStep, KbState, Problem, ReasoningChain, Rule, TraversalPolicy};

/// A fully rendered shot with the offsets needed to edit or truncate it.
/// All offsets are relative to the start of the shot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShotLayout {
    pub text: String,
    /// Non-syntax spans in text order, `shot_index` 0.
    pub spans: Vec<RoleSpan>,
    /// `(rule id, range of the rule body after "# (RuleN): ")`.
    pub rule_bodies: Vec<(u32, Range<usize>)>,
    /// Offset of the first chain line (the initial KB snapshot).
    pub chain_start: usize,
}

impl ShotLayout {
    pub fn span(&self, role: Role, step: usize, nth: usize) -> Option<&RoleSpan> {
        self.spans.iter().filter(|s| s.role == role && s.step_index == Some(step)).nth(nth)
    }

    pub fn rule_body(&self, id: u32) -> Option<Range<usize>> {
        self.rule_bodies.iter().find(|(r, _)| *r == id).map(|(_, b)| b.clone())
    }

    pub fn cut_offset(&self, cutoff: Cutoff) -> usize {
        match cutoff {
            Cutoff::Full => self.text.len(),
            Cutoff::Problem => self.chain_start,
            Cutoff::Byte(n) => n.min(self.text.len()),
        }
    }
}

struct Builder {
    text: String,
    spans: Vec<RoleSpan>,
}

impl Builder {
    fn push(&mut self, s: &str) {
        self.text.push_str(s);
    }

    fn push_role(&mut self, s: &str, role: Role, step: usize) {
        let start = self.text.len();
        self.text.push_str(s);
        self.spans.push(RoleSpan { role, start, end: self.text.len(), shot_index: 0, step_index: Some(step) });
    }

    fn push_char_role(&mut self, c: char, role: Role, step: usize) {
        let mut buf = [0u8; 4];
        self.push_role(c.encode_utf8(&mut buf), role, step);
    }

    fn kb_line(&mut self, kb: &KbState, step: usize) {
        self.push("KB = {");
        for (i, p) in kb.premises().iter().enumerate() {
            if i > 0 {
                self.push(", ");
            }
            self.push_char_role(p.as_char(), Role::PremiseInKb, step);
        }
        self.push("}");
    }
}

pub(crate) fn rule_body(rule: &Rule) -> String {
    match rule.conditions.as_slice() {
        [] => format!("{} is true", rule.conclusion),
        conds => {
            let c: Vec<String> = conds.iter().map(|p| p.to_string()).collect();
            format!("If {} then {}", c.join(", "), rule.conclusion)
        }
    }
}

/// Renders one shot and records the role spans while writing.
pub fn shot_layout(problem: &Problem, chain: &ReasoningChain) -> ShotLayout {
    let mut b = Builder { text: String::with_capacity(1024), spans: Vec::new() };
    let mut rule_bodies = Vec::with_capacity(problem.rules.len());
    b.push("### Given list of facts and rules:\n");
    for r in &problem.rules {
        let _ = write!(b.text, "# (Rule{}): ", r.id);
        let start = b.text.len();
        b.push(&rule_body(r));
        rule_bodies.push((r.id, start..b.text.len()));
        b.push("\n");
    }
    let q = problem.question;
    let _ = write!(b.text, "# (Question): truth value of {q}?\n");
    let _ = write!(b.text, "# (Answer): Start from the object mentioned in the question: {q}\n");
    let chain_start = b.text.len();

    b.kb_line(&problem.initial_kb(), 0);
    for (i, step) in chain.steps.iter().enumerate() {
        b.push("\n");
        match step {
            ChainStep::Malformed { text } => b.push(text),
            ChainStep::Inference(s) => {
                b.push("=> F(KB[");
                for (j, p) in s.selected.iter().enumerate() {
                    b.push("'");
                    b.push_char_role(p.as_char(), Role::PremiseSelection, i);
                    b.push("'");
                    if j + 1 < s.selected.len() {
                        b.push_role(",", Role::PremiseSelectionTermination, i);
                        b.push(" ");
                    } else {
                        b.push_role("]", Role::PremiseSelectionTermination, i);
                    }
                }
                if s.selected.is_empty() {
                    b.push("]");
                }
                b.push(", Rule");
                b.push_role(&s.rule_id.to_string(), Role::RuleSelection, i);
                b.push(") => `");
                b.push_char_role(s.derived.as_char(), Role::FactDerivation, i);
                b.push("`");
                if let Some(kb) = &s.kb_after {
                    b.push("\n");
                    b.kb_line(kb, i + 1);
                }
            }
        }
    }
    let verdict = if chain.verdict { "True" } else { "False" };
    let _ = write!(b.text, "\n=> Validate(KB, Question=`{q}`) = {verdict}.");
    ShotLayout { text: b.text, spans: b.spans, rule_bodies, chain_start }
}

/// Renders one shot, truncated at `cutoff`.
pub fn render_shot(problem: &Problem, chain: &ReasoningChain, cutoff: Cutoff) -> String {
    let mut layout = shot_layout(problem, chain);
    let cut = layout.cut_offset(cutoff);
    layout.text.truncate(cut);
    layout.text
}

fn clip(spans: &[RoleSpan], cut: usize, offset: usize, shot_index: usize) -> impl Iterator<Item = RoleSpan> + '_ {
    spans.iter().filter(move |s| s.start < cut).map(move |s| RoleSpan {
        start: s.start + offset,
        end: s.end.min(cut) + offset,
        shot_index,
        ..*s
    })
}

/// Assembles demonstrations and a (possibly truncated) query into one prompt.
pub fn render_prompt(
    demos: &[(Problem, ReasoningChain)],
    query: (&Problem, &ReasoningChain, Cutoff),
    policy: TraversalPolicy,
) -> PromptDoc {
    let mut text = String::new();
    let mut spans = Vec::new();
    let mut shots = Vec::with_capacity(demos.len() + 1);
    let mut starts = Vec::with_capacity(demos.len() + 1);
    let all = demos.iter().map(|(p, c)| (p, c, Cutoff::Full)).chain(std::iter::once(query));
    for (i, (problem, chain, cutoff)) in all.enumerate() {
        if i > 0 {
            text.push_str(SEPARATOR);
        }
        let layout = shot_layout(problem, chain);
        let cut = layout.cut_offset(cutoff);
        let offset = text.len();
        starts.push(offset);
        spans.extend(clip(&layout.spans, cut, offset, i));
        let shot_text = layout.text[..cut].to_string();
        text.push_str(&shot_text);
        shots.push(PromptShot { problem: problem.clone(), chain: chain.clone(), cutoff, text: shot_text });
    }
    let spans = fill_syntax(spans, text.len(), &starts);
    PromptDoc { shots, text, spans, k: demos.len(), policy }
}
