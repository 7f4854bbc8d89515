// SPDX-License-Identifier: MIT OR Apache-2.0

//! Gold-chain derivation under breadth-first and depth-first traversal.

use serde::{Deserialize, Serialize};

use super::{InferenceStep, KbState, LogicError, Premise, Problem, ReasoningChain, Rule};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Traversal {
    /// Fire the rule whose most recently proven condition is earliest in
    /// derivation order (lowest rule id breaks ties).
    #[default]
    Bfs,
    /// Expand each newly derived premise before returning to older ones:
    /// initial facts are visited in rule-id order, and visiting a premise
    /// fires its applicable rules in id order, recursing into each conclusion.
    Dfs,
}

impl Traversal {
    pub fn opposite(self) -> Self {
        match self {
            Traversal::Bfs => Traversal::Dfs,
            Traversal::Dfs => Traversal::Bfs,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct TraversalPolicy {
    pub kind: Traversal,
    pub stop_on_goal: bool,
    pub extra_steps: usize,
}

impl Default for TraversalPolicy {
    fn default() -> Self {
        TraversalPolicy { kind: Traversal::Bfs, stop_on_goal: true, extra_steps: 0 }
    }
}

impl TraversalPolicy {
    pub fn bfs() -> Self {
        Self::default()
    }

    pub fn dfs() -> Self {
        TraversalPolicy { kind: Traversal::Dfs, ..Self::default() }
    }

    pub fn with_kind(self, kind: Traversal) -> Self {
        TraversalPolicy { kind, ..self }
    }
}

/// Every rule firing until the fixpoint, in traversal order.
pub fn firing_order(problem: &Problem, kind: Traversal) -> Vec<InferenceStep> {
    let mut kb = problem.initial_kb();
    let mut fired: Vec<bool> = problem.rules.iter().map(Rule::is_fact).collect();
    let mut steps = Vec::new();
    match kind {
        Traversal::Bfs => loop {
            let mut best: Option<(usize, u32, usize)> = None;
            for (i, r) in problem.rules.iter().enumerate() {
                if fired[i] || kb.contains(r.conclusion) || !r.conditions.iter().all(|&c| kb.contains(c)) {
                    continue;
                }
                let key = r.conditions.iter().filter_map(|&c| kb.position(c)).max().unwrap_or(0);
                if best.map_or(true, |(k, id, _)| (key, r.id) < (k, id)) {
                    best = Some((key, r.id, i));
                }
            }
            let Some((_, _, i)) = best else { break };
            fire(problem, i, &mut kb, &mut fired, &mut steps);
        },
        Traversal::Dfs => {
            let roots: Vec<Premise> = kb.premises().to_vec();
            for root in roots {
                dfs_visit(problem, root, &mut kb, &mut fired, &mut steps);
            }
        }
    }
    steps
}

fn fire(problem: &Problem, i: usize, kb: &mut KbState, fired: &mut [bool], steps: &mut Vec<InferenceStep>) {
    let rule = &problem.rules[i];
    fired[i] = true;
    kb.insert(rule.conclusion);
    steps.push(InferenceStep {
        selected: rule.conditions.clone(),
        rule_id: rule.id,
        derived: rule.conclusion,
        kb_after: Some(kb.clone()),
    });
}

fn dfs_visit(problem: &Problem, p: Premise, kb: &mut KbState, fired: &mut [bool], steps: &mut Vec<InferenceStep>) {
    // rules are stored in id order, so index order is id order
    for i in 0..problem.rules.len() {
        let r = &problem.rules[i];
        if fired[i] || !r.conditions.contains(&p) {
            continue;
        }
        if kb.contains(r.conclusion) || !r.conditions.iter().all(|&c| kb.contains(c)) {
            continue;
        }
        let derived = r.conclusion;
        fire(problem, i, kb, fired, steps);
        dfs_visit(problem, derived, kb, fired, steps);
    }
}

/// Gold reasoning chain for `problem` under `policy`.
///
/// With `stop_on_goal` the chain ends `extra_steps` firings after the
/// question is proven (immediately when the question is already a fact and
/// `extra_steps` is 0); otherwise it runs to the fixpoint.
pub fn derive_chain(problem: &Problem, policy: &TraversalPolicy) -> Result<ReasoningChain, LogicError> {
    let question = problem.question;
    let order = firing_order(problem, policy.kind);
    let initially = problem.initial_kb().contains(question);
    let goal_at = if initially { Some(0) } else { order.iter().position(|s| s.derived == question).map(|i| i + 1) };
    let Some(goal_len) = goal_at else {
        return Err(LogicError::NotDerivable(question));
    };
    let len = if policy.stop_on_goal { (goal_len + policy.extra_steps).min(order.len()) } else { order.len() };
    let steps = order.into_iter().take(len).collect();
    Ok(ReasoningChain::from_steps(steps, true))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::{demo2, problem};
    use super::super::{validate_chain, GenConfig};
    use super::*;
    use crate::logic::{closure, generate_problem};

    fn summary(chain: &ReasoningChain) -> Vec<(String, u32, char)> {
        chain
            .inference_steps()
            .map(|s| (s.selected.iter().map(|p| p.as_char()).collect(), s.rule_id, s.derived.as_char()))
            .collect()
    }

    fn demo1() -> Problem {
        problem(&["L>J", "OS>F", "U>M", "N>L", "SH>R", "LI>F", "P>I", "JA>B", "S", "N", "P"], 'F')
    }

    fn demo3() -> Problem {
        problem(
            &[
                "S>G", "R>O", "T>W", "AM>I", "K>E", "E>U", "H>C", "G>V", "OG>I", "I>C", "O>V", "WK>N", "VL>W",
                "VF>S", "FW>A", "QP>H", "J", "M", "R", "I", "A", "B",
            ],
            'V',
        )
    }

    fn s(sel: &str, id: u32, d: char) -> (String, u32, char) {
        (sel.to_string(), id, d)
    }

    #[test]
    fn traversal_demo1_depth_first_and_breadth_first() {
        let dfs = derive_chain(&demo1(), &TraversalPolicy::dfs()).unwrap();
        assert_eq!(summary(&dfs), vec![s("N", 4, 'L'), s("L", 1, 'J'), s("P", 7, 'I'), s("LI", 6, 'F')]);
        let bfs = derive_chain(&demo1(), &TraversalPolicy::bfs()).unwrap();
        assert_eq!(summary(&bfs), vec![s("N", 4, 'L'), s("P", 7, 'I'), s("L", 1, 'J'), s("LI", 6, 'F')]);
    }

    #[test]
    fn traversal_demo2() {
        let dfs = derive_chain(&demo2(), &TraversalPolicy::dfs()).unwrap();
        assert_eq!(summary(&dfs), vec![s("L", 2, 'B'), s("B", 6, 'V')]);
        let bfs = derive_chain(&demo2(), &TraversalPolicy::bfs()).unwrap();
        assert_eq!(summary(&bfs), vec![s("L", 2, 'B'), s("Q", 7, 'V')]);
    }

    #[test]
    fn traversal_demo3_query() {
        let dfs = derive_chain(&demo3(), &TraversalPolicy::dfs()).unwrap();
        assert_eq!(summary(&dfs), vec![s("R", 2, 'O'), s("O", 11, 'V')]);
        assert!(dfs.verdict);
        let bfs = derive_chain(&demo3(), &TraversalPolicy::bfs()).unwrap();
        assert_eq!(summary(&bfs), vec![s("R", 2, 'O'), s("I", 10, 'C'), s("O", 11, 'V')]);
    }

    #[test]
    fn question_already_fact_gives_empty_chain() {
        let pr = problem(&["A", "A>B"], 'A');
        let c = derive_chain(&pr, &TraversalPolicy::default()).unwrap();
        assert!(c.is_empty() && c.verdict);
    }

    #[test]
    fn extra_steps_and_full_traversal() {
        let pr = demo1();
        let pol = TraversalPolicy { extra_steps: 5, ..TraversalPolicy::dfs() };
        assert_eq!(derive_chain(&pr, &pol).unwrap().len(), 4);
        let pr2 = demo2();
        let pol = TraversalPolicy { extra_steps: 1, ..TraversalPolicy::bfs() };
        let c = derive_chain(&pr2, &pol).unwrap();
        assert_eq!(summary(&c), vec![s("L", 2, 'B'), s("Q", 7, 'V')]);
        let full = TraversalPolicy { stop_on_goal: false, ..TraversalPolicy::bfs() };
        let c = derive_chain(&pr2, &full).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn not_derivable() {
        let pr = problem(&["A", "B>C"], 'C');
        assert_eq!(derive_chain(&pr, &TraversalPolicy::default()), Err(LogicError::NotDerivable(Premise::lit('C'))));
    }

    #[test]
    fn derived_chains_validate_and_grow_kb() {
        for seed in 0..500 {
            let pr = generate_problem(seed, &GenConfig::default()).unwrap();
            let cl = closure(&pr.rules);
            for pol in [TraversalPolicy::bfs(), TraversalPolicy::dfs()] {
                let chain = derive_chain(&pr, &pol).unwrap();
                let v = validate_chain(&pr, &chain);
                assert!(v.all_valid(), "seed {seed} {pol:?}");
                assert_eq!(v.final_verdict, cl.contains(pr.question));
                let mut size = pr.initial_kb().len();
                for st in chain.inference_steps() {
                    let kb = st.kb_after.as_ref().unwrap();
                    assert_eq!(kb.len(), size + 1);
                    size += 1;
                }
            }
            let full_b = firing_order(&pr, Traversal::Bfs);
            let full_d = firing_order(&pr, Traversal::Dfs);
            let set_b: crate::logic::PremiseSet = full_b.iter().map(|s| s.derived).chain(pr.initial_kb().premises().iter().copied()).collect();
            let set_d: crate::logic::PremiseSet = full_d.iter().map(|s| s.derived).chain(pr.initial_kb().premises().iter().copied()).collect();
            assert_eq!(set_b, cl);
            assert_eq!(set_d, cl);
        }
    }
}
