// SPDX-License-Identifier: MIT OR Apache-2.0

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{CorruptionType, PromptPair};
use crate::logic::{
    closure, derive_chain, firing_order, InferenceStep, KbState, Premise, Problem, ReasoningChain, TraversalPolicy,
};
use crate::promptgen::{render_prompt, shot_layout, Cutoff, PromptDoc, Role};

struct Draft {
    kind: CorruptionType,
    demos: Option<Vec<(Problem, ReasoningChain)>>,
    policy: TraversalPolicy,
    problem: Problem,
    /// Corrupted steps up to and including the probed step.
    chain: ReasoningChain,
    step: usize,
    component: Role,
    /// Query-relative causal spans; `None` means "every differing byte".
    causal: Option<Vec<Range<usize>>>,
}

fn same_step(a: &InferenceStep, b: &InferenceStep) -> bool {
    a.selected == b.selected && a.rule_id == b.rule_id && a.derived == b.derived
}

fn steps_of(chain: &ReasoningChain) -> Vec<InferenceStep> {
    chain.inference_steps().cloned().collect()
}

/// First step where the corrupted order departs from the clean chain,
/// provided both have a step there.
fn divergence(clean: &[InferenceStep], corrupted: &[InferenceStep]) -> Option<usize> {
    let i = clean.iter().zip(corrupted).position(|(a, b)| !same_step(a, b))?;
    Some(i)
}

fn prefix_chain(steps: &[InferenceStep], through: usize) -> ReasoningChain {
    ReasoningChain::from_steps(steps[..=through].to_vec(), true)
}

fn kb_before(problem: &Problem, steps: &[InferenceStep], i: usize) -> KbState {
    let mut kb = problem.initial_kb();
    for s in &steps[..i] {
        kb.insert(s.derived);
    }
    kb
}

fn diff_runs(a: &[u8], b: &[u8]) -> Vec<Range<usize>> {
    let mut out: Vec<Range<usize>> = Vec::new();
    for i in (0..a.len().min(b.len())).filter(|&i| a[i] != b[i]) {
        match out.last_mut() {
            Some(r) if r.end == i => r.end = i + 1,
            _ => out.push(i..i + 1),
        }
    }
    out
}

fn assemble(doc: &PromptDoc, d: Draft) -> Option<PromptPair> {
    let q = doc.query();
    let clean_layout = shot_layout(&q.problem, &q.chain);
    let corr_layout = shot_layout(&d.problem, &d.chain);
    let c = clean_layout.span(d.component, d.step, 0)?;
    let k = corr_layout.span(d.component, d.step, 0)?;
    if c.start != k.start {
        return None;
    }
    let cut = c.start;
    let clean_target = clean_layout.text[c.range()].to_string();
    let corrupted_target = corr_layout.text[k.range()].to_string();
    if clean_target == corrupted_target {
        return None;
    }

    let demos = doc.demos();
    let clean = render_prompt(&demos, (&q.problem, &q.chain, Cutoff::Byte(cut)), doc.policy);
    let corr_demos = d.demos.as_ref().unwrap_or(&demos);
    let corrupted = render_prompt(corr_demos, (&d.problem, &d.chain, Cutoff::Byte(cut)), d.policy);
    if clean.text.len() != corrupted.text.len() {
        return None;
    }
    let q_off = *clean.shot_starts().last()?;
    let causal_spans = match d.causal {
        Some(spans) => {
            let mut v: Vec<Range<usize>> =
                spans.into_iter().filter(|r| r.start < cut).map(|r| q_off + r.start..q_off + r.end.min(cut)).collect();
            v.sort_by_key(|r| r.start);
            v.dedup();
            v
        }
        None => diff_runs(clean.text.as_bytes(), corrupted.text.as_bytes()),
    };
    let len = clean.text.len();
    Some(PromptPair {
        clean,
        corrupted,
        kind: d.kind,
        causal_spans,
        component_span: len..len + clean_target.len(),
        preceding_char: len - 1,
        clean_target,
        corrupted_target,
        step_index: d.step,
    })
}

/// Replaces the fact `fact_id` with `new` in the query problem. The probe
/// sits at the first step whose gold premise changes.
pub fn corrupt_fact(doc: &PromptDoc, fact_id: u32, new: Premise) -> Option<PromptPair> {
    let q = doc.query();
    let fact = q.problem.rule(fact_id).filter(|r| r.is_fact())?;
    let old = fact.conclusion;
    if new == old || new == q.problem.question || q.problem.initial_kb().contains(new) {
        return None;
    }
    let mut problem = q.problem.clone();
    problem.rules[fact_id as usize - 1].conclusion = new;
    problem.validate().ok()?;

    let clean = steps_of(&q.chain);
    let corr = firing_order(&problem, doc.policy.kind);
    let i = divergence(&clean, &corr)?;
    if clean[i].selected[0] == corr[i].selected[0] {
        return None;
    }
    let layout = shot_layout(&q.problem, &q.chain);
    let body = layout.rule_body(fact_id)?;
    let mut causal = vec![body.start..body.start + 1];
    causal.extend(
        layout
            .spans
            .iter()
            .filter(|s| s.role == Role::PremiseInKb && s.step_index.is_some_and(|j| j <= i))
            .filter(|s| layout.text[s.range()].starts_with(old.as_char()))
            .map(|s| s.range()),
    );
    assemble(
        doc,
        Draft {
            kind: CorruptionType::C1,
            demos: None,
            policy: doc.policy,
            chain: prefix_chain(&corr, i),
            problem,
            step: i,
            component: Role::PremiseSelection,
            causal: Some(causal),
        },
    )
}

/// Takes the last single-premise step `V -> D` (rule Rx), moves Rx's
/// conclusion to the unprovable letter `z`, and rewrites the unused
/// two-condition rule `ry_id` to `If V, b then D`. The probe is the
/// termination character after `V`: `]` clean, `,` corrupted.
pub fn corrupt_rule_termination(doc: &PromptDoc, ry_id: u32, b: Premise, z: Premise) -> Option<PromptPair> {
    let q = doc.query();
    let clean = steps_of(&q.chain);
    let i = clean.iter().rposition(|s| s.selected.len() == 1)?;
    let (v, d, rx_id) = (clean[i].selected[0], clean[i].derived, clean[i].rule_id);
    let ry = q.problem.rule(ry_id)?;
    if ry_id == rx_id || ry.conditions.len() != 2 || clean.iter().any(|s| s.rule_id == ry_id) {
        return None;
    }
    if b == v || !kb_before(&q.problem, &clean, i).contains(b) {
        return None;
    }
    if closure(&q.problem.rules).contains(z) {
        return None;
    }
    let mut problem = q.problem.clone();
    problem.rules[rx_id as usize - 1].conclusion = z;
    let r = &mut problem.rules[ry_id as usize - 1];
    r.conditions = vec![v, b];
    r.conclusion = d;
    problem.validate().ok()?;

    let corr = firing_order(&problem, doc.policy.kind);
    if corr.len() <= i || divergence(&clean[..i], &corr[..i]).is_some() {
        return None;
    }
    if corr[i].rule_id != ry_id || corr[i].selected != [v, b] {
        return None;
    }
    let layout = shot_layout(&q.problem, &q.chain);
    let causal = vec![layout.rule_body(rx_id)?, layout.rule_body(ry_id)?];
    assemble(
        doc,
        Draft {
            kind: CorruptionType::C2,
            demos: None,
            policy: doc.policy,
            chain: prefix_chain(&corr, i),
            problem,
            step: i,
            component: Role::PremiseSelectionTermination,
            causal: Some(causal),
        },
    )
}

/// Replaces condition `cond` of the fired rule `rx_id` with the unseen
/// premise `new`. The probe is the rule id of the first step where the
/// corrupted chain picks a different rule with the same digit count.
pub fn corrupt_rule_condition(doc: &PromptDoc, rx_id: u32, cond: usize, new: Premise) -> Option<PromptPair> {
    let q = doc.query();
    let clean = steps_of(&q.chain);
    if !clean.iter().any(|s| s.rule_id == rx_id) || q.problem.letters().contains(new) {
        return None;
    }
    let mut problem = q.problem.clone();
    let rx = &mut problem.rules[rx_id as usize - 1];
    *rx.conditions.get_mut(cond)? = new;
    problem.validate().ok()?;

    let corr = firing_order(&problem, doc.policy.kind);
    let i = divergence(&clean, &corr)?;
    let (a, b) = (&clean[i], &corr[i]);
    let (da, db) = (a.rule_id.to_string(), b.rule_id.to_string());
    // the model predicts the id one character at a time, so the first digit must already differ
    if a.selected.len() != b.selected.len() || da.len() != db.len() || da.as_bytes()[0] == db.as_bytes()[0] {
        return None;
    }
    let layout = shot_layout(&q.problem, &q.chain);
    let mut causal = vec![layout.rule_body(rx_id)?];
    for (n, (pa, pb)) in a.selected.iter().zip(&b.selected).enumerate() {
        if pa != pb {
            causal.push(layout.span(Role::PremiseSelection, i, n)?.range());
        }
    }
    assemble(
        doc,
        Draft {
            kind: CorruptionType::C3,
            demos: None,
            policy: doc.policy,
            chain: prefix_chain(&corr, i),
            problem,
            step: i,
            component: Role::RuleSelection,
            causal: Some(causal),
        },
    )
}

/// True when re-deriving `chain` under the opposite traversal keeps its step
/// count and rendered length.
pub fn traversal_parity(problem: &Problem, chain: &ReasoningChain, policy: TraversalPolicy) -> bool {
    let opposite = policy.with_kind(policy.kind.opposite());
    let Ok(alt) = derive_chain(problem, &opposite) else { return false };
    alt.len() == chain.len() && (alt == *chain || shot_layout(problem, &alt).text.len() == shot_layout(problem, chain).text.len())
}

/// Re-derives every demonstration under the opposite traversal. Each
/// changed demo must keep its step count and byte length. The query is
/// unchanged; the probe is its first premise where the two traversals part.
pub fn corrupt_traversal(doc: &PromptDoc) -> Option<PromptPair> {
    let opposite = doc.policy.with_kind(doc.policy.kind.opposite());
    let mut demos = Vec::with_capacity(doc.k);
    let mut changed = false;
    for (p, c) in doc.demos() {
        if !traversal_parity(&p, &c, doc.policy) {
            return None;
        }
        let alt = derive_chain(&p, &opposite).ok()?;
        changed |= alt != c;
        demos.push((p, alt));
    }
    if !changed {
        return None;
    }
    let q = doc.query();
    let clean = steps_of(&q.chain);
    let alt = firing_order(&q.problem, opposite.kind);
    let i = divergence(&clean, &alt)?;
    if clean[i].selected[0] == alt[i].selected[0] {
        return None;
    }
    assemble(
        doc,
        Draft {
            kind: CorruptionType::C4,
            demos: Some(demos),
            policy: opposite,
            problem: q.problem.clone(),
            chain: prefix_chain(&alt, i),
            step: i,
            component: Role::PremiseSelection,
            causal: None,
        },
    )
}

fn letters_where(pred: impl Fn(Premise) -> bool) -> Vec<Premise> {
    Premise::alphabet().into_iter().filter(|&p| pred(p)).collect()
}

pub(super) fn random_c1(doc: &PromptDoc, rng: &mut impl Rng) -> Option<PromptPair> {
    let q = doc.query();
    let used: Vec<Premise> = q.chain.inference_steps().flat_map(|s| s.selected.iter().copied()).collect();
    let mut facts: Vec<(u32, Premise)> =
        q.problem.facts().filter(|f| used.contains(&f.conclusion)).map(|f| (f.id, f.conclusion)).collect();
    facts.shuffle(rng);
    let kb = q.problem.initial_kb();
    let mut letters = letters_where(|p| !kb.contains(p) && p != q.problem.question);
    for (id, _) in facts {
        letters.shuffle(rng);
        if let Some(pair) = letters.iter().find_map(|&l| corrupt_fact(doc, id, l)) {
            return Some(pair);
        }
    }
    None
}

pub(super) fn random_c2(doc: &PromptDoc, rng: &mut impl Rng) -> Option<PromptPair> {
    let q = doc.query();
    let steps = steps_of(&q.chain);
    let i = steps.iter().rposition(|s| s.selected.len() == 1)?;
    let v = steps[i].selected[0];
    let mut rys: Vec<u32> = q
        .problem
        .rules
        .iter()
        .filter(|r| r.conditions.len() == 2 && !steps.iter().any(|s| s.rule_id == r.id))
        .map(|r| r.id)
        .collect();
    rys.shuffle(rng);
    let mut bs: Vec<Premise> = kb_before(&q.problem, &steps, i).premises().iter().copied().filter(|&p| p != v).collect();
    let proven = closure(&q.problem.rules);
    let zs = letters_where(|p| !proven.contains(p));
    if zs.is_empty() {
        return None;
    }
    for ry in rys {
        bs.shuffle(rng);
        for &b in &bs {
            let z = *zs.choose(rng)?;
            if let Some(pair) = corrupt_rule_termination(doc, ry, b, z) {
                return Some(pair);
            }
        }
    }
    None
}

pub(super) fn random_c3(doc: &PromptDoc, rng: &mut impl Rng) -> Option<PromptPair> {
    let q = doc.query();
    let mut fired: Vec<(u32, usize)> =
        q.chain.inference_steps().flat_map(|s| (0..s.selected.len()).map(move |c| (s.rule_id, c))).collect();
    fired.shuffle(rng);
    let letters = q.problem.letters();
    let unseen = letters_where(|p| !letters.contains(p));
    for (rx, c) in fired {
        let new = *unseen.choose(rng)?;
        if let Some(pair) = corrupt_rule_condition(doc, rx, c, new) {
            return Some(pair);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::GenConfig;
    use crate::promptgen::synth_doc;
    use crate::seeding::{derive_seed, rng_from_seed};

    #[test]
    fn reverting_causal_spans_restores_clean_text() {
        let gen = GenConfig::default();
        for kind in CorruptionType::ALL {
            let mut found = 0;
            for s in 0..300 {
                let doc = synth_doc(3, derive_seed(77, s), &gen).unwrap();
                let Some(pair) = super::super::corrupt(&doc, kind, &mut rng_from_seed(s)) else { continue };
                let mut reverted = pair.corrupted.text.clone().into_bytes();
                for r in &pair.causal_spans {
                    reverted[r.clone()].copy_from_slice(&pair.clean.text.as_bytes()[r.clone()]);
                }
                assert_eq!(reverted, pair.clean.text.as_bytes(), "{kind:?}");
                found += 1;
                if found == 10 {
                    break;
                }
            }
            assert!(found > 0, "{kind:?} never produced a pair");
        }
    }

    #[test]
    fn targets_match_full_renders_at_component() {
        let gen = GenConfig::default();
        for kind in CorruptionType::ALL {
            for s in 0..100 {
                let doc = synth_doc(2, derive_seed(3, s), &gen).unwrap();
                let Some(pair) = super::super::corrupt(&doc, kind, &mut rng_from_seed(s)) else { continue };
                let off = *pair.clean.shot_starts().last().unwrap();
                let at = pair.component_span.start - off;
                let cq = pair.clean.query();
                let full = shot_layout(&cq.problem, &cq.chain).text;
                assert!(full[at..].starts_with(&pair.clean_target));
                let kq = pair.corrupted.query();
                let full = shot_layout(&kq.problem, &kq.chain).text;
                assert!(full[at..].starts_with(&pair.corrupted_target));
            }
        }
    }
}
