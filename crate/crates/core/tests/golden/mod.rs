// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hand-encoded reference problems and their documented corruptions, shared
//! by the golden and acceptance targets. Each check panics on mismatch.

use circuitlab::counterfactual::{
    check_structure, corrupt_fact, corrupt_rule_condition, corrupt_rule_termination, corrupt_traversal, CorruptionType,
    PromptPair,
};
use circuitlab::logic::{
    derive_chain, validate_chain, InferenceStep, Premise, Problem, ReasoningChain, Rule, TraversalPolicy,
};
use circuitlab::promptgen::{parse_problem, render_prompt, split_shots, Cutoff, PromptDoc};

fn fixture(name: &str, side: &str) -> String {
    let path = format!("{}/tests/fixtures/reference_{name}.{side}.txt", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn p(c: char) -> Premise {
    Premise::lit(c)
}

/// `"Q"` is a fact, `"JK>O"` is `If J, K then O`. Ids follow list order.
fn problem(rules: &[&str], question: char) -> Problem {
    let rules = rules
        .iter()
        .zip(1..)
        .map(|(r, id)| match r.split_once('>') {
            None => Rule::fact(id, p(r.chars().next().unwrap())),
            Some((conds, concl)) => Rule::new(id, conds.chars().map(p).collect(), p(concl.chars().next().unwrap())),
        })
        .collect();
    Problem { rules, question: p(question) }
}

/// Steps as `(selected, rule id, derived)`, with KB snapshots filled in.
fn chain(pr: &Problem, steps: &[(&str, u32, char)]) -> ReasoningChain {
    let mut kb = pr.initial_kb();
    let steps = steps
        .iter()
        .map(|&(sel, rule_id, d)| {
            kb.insert(p(d));
            InferenceStep { selected: sel.chars().map(p).collect(), rule_id, derived: p(d), kb_after: Some(kb.clone()) }
        })
        .collect();
    ReasoningChain::from_steps(steps, true)
}

fn zero_shot(pr: &Problem, c: &ReasoningChain, policy: TraversalPolicy) -> PromptDoc {
    render_prompt(&[], (pr, c, Cutoff::Full), policy)
}

fn check_pair(pair: &PromptPair, name: &str, kind: CorruptionType, targets: (&str, &str)) {
    let clean = fixture(name, "clean");
    let corrupted = fixture(name, "corrupted");
    assert_eq!(pair.kind, kind);
    assert_eq!((pair.clean_target.as_str(), pair.corrupted_target.as_str()), targets);
    assert!(clean.starts_with(&format!("{}{}", pair.clean.text, pair.clean_target)));
    assert_eq!(format!("{}{}", pair.corrupted.text, pair.corrupted_target), corrupted);
    check_structure(&pair.to_record(0, 0)).unwrap();
}

fn fact_edit_problem() -> Problem {
    problem(
        &[
            "V", "S", "Q", "E", "L", "A", "DJ>N", "D>E", "JK>O", "Q>P", "PD>O", "KC>J", "W>D", "K>U", "V>F", "Q>F", "K>R",
            "OH>M", "F>U", "MA>T", "O>S",
        ],
        'P',
    )
}

fn termination_edit_problem() -> Problem {
    problem(
        &[
            "RJ>A", "QO>P", "J>U", "K>Q", "D>F", "U>C", "V>U", "V>N", "G>R", "UC>V", "A>O", "F>I", "S>H", "NM>O", "NK>A",
            "VD>R", "L", "O", "H", "T", "U", "B",
        ],
        'N',
    )
}

fn rule_edit_problem() -> Problem {
    problem(
        &["JT>B", "O>U", "CQ>D", "S>W", "M>N", "OA>F", "SW>G", "CI>K", "W>D", "D>W", "UL>C", "QT>F", "RM>B", "O", "M", "J", "F"],
        'N',
    )
}

fn traversal_demos() -> Vec<Problem> {
    vec![
        problem(&["L>J", "OS>F", "U>M", "N>L", "SH>R", "LI>F", "P>I", "JA>B", "S", "N", "P"], 'F'),
        problem(&["O>W", "L>B", "M>U", "B>L", "I>L", "B>V", "Q>V", "AK>F", "L", "Q", "I"], 'V'),
        problem(
            &[
                "S>G", "R>O", "T>W", "AM>I", "K>E", "E>U", "H>C", "G>V", "OG>I", "I>C", "O>V", "WK>N", "VL>W", "VF>S",
                "FW>A", "QP>H", "J", "M", "R", "I", "A", "B",
            ],
            'V',
        ),
    ]
}

pub fn fact_edit_renders_byte_exact() {
    let pr = fact_edit_problem();
    // the reference chain keeps going after the goal, so it is spelled out
    let c = chain(&pr, &[("Q", 10, 'P'), ("V", 15, 'F'), ("F", 19, 'U')]);
    assert!(validate_chain(&pr, &c).all_valid());
    let doc = zero_shot(&pr, &c, TraversalPolicy::bfs());
    assert_eq!(doc.text, fixture("fact_edit", "clean"));
    assert_eq!(parse_problem(&doc.text).unwrap(), pr);
}

pub fn fact_edit_corruption() {
    let pr = fact_edit_problem();
    let c = chain(&pr, &[("Q", 10, 'P'), ("V", 15, 'F'), ("F", 19, 'U')]);
    let doc = zero_shot(&pr, &c, TraversalPolicy::bfs());
    let pair = corrupt_fact(&doc, 3, p('K')).expect("Q is true -> K is true");
    assert!(pair.corrupted.text.contains("# (Rule3): K is true\n"));
    assert!(!pair.corrupted.text.contains("Q is true"));
    // the reference corrupted step is goal-first and starts from K; forward
    // chaining from the edited KB starts from V, so only the prefix matches
    let corrupted = fixture("fact_edit", "corrupted");
    assert_eq!(pair.corrupted.text, corrupted[..corrupted.len() - 1]);
    assert_eq!((pair.clean_target.as_str(), pair.corrupted_target.as_str()), ("Q", "V"));
    assert!(fixture("fact_edit", "clean").starts_with(&format!("{}Q", pair.clean.text)));
    check_structure(&pair.to_record(0, 0)).unwrap();
}

pub fn termination_edit_renders_byte_exact() {
    let pr = termination_edit_problem();
    let c = chain(&pr, &[("U", 6, 'C'), ("UC", 10, 'V'), ("V", 8, 'N')]);
    assert_eq!(derive_chain(&pr, &TraversalPolicy::bfs()).unwrap(), c);
    assert_eq!(zero_shot(&pr, &c, TraversalPolicy::bfs()).text, fixture("termination_edit", "clean"));
}

pub fn termination_edit_corruption() {
    let pr = termination_edit_problem();
    let c = derive_chain(&pr, &TraversalPolicy::bfs()).unwrap();
    let doc = zero_shot(&pr, &c, TraversalPolicy::bfs());
    let pair = corrupt_rule_termination(&doc, 1, p('B'), p('K')).expect("documented rewrite of Rule1 and Rule8");
    assert!(pair.corrupted.text.contains("# (Rule1): If V, B then N\n"));
    assert!(pair.corrupted.text.contains("# (Rule8): If V then K\n"));
    check_pair(&pair, "termination_edit", CorruptionType::C2, ("]", ","));
}

pub fn rule_edit_renders_byte_exact() {
    let pr = rule_edit_problem();
    let c = derive_chain(&pr, &TraversalPolicy::bfs()).unwrap();
    assert_eq!(c, chain(&pr, &[("O", 2, 'U'), ("M", 5, 'N')]));
    assert_eq!(zero_shot(&pr, &c, TraversalPolicy::bfs()).text, fixture("rule_edit", "clean"));
}

pub fn rule_edit_corruption() {
    let pr = rule_edit_problem();
    let c = derive_chain(&pr, &TraversalPolicy::bfs()).unwrap();
    let doc = zero_shot(&pr, &c, TraversalPolicy::bfs());
    let pair = corrupt_rule_condition(&doc, 2, 0, p('P')).expect("If O then U -> If P then U");
    assert!(pair.corrupted.text.contains("# (Rule2): If P then U\n"));
    check_pair(&pair, "rule_edit", CorruptionType::C3, ("2", "5"));
}

pub fn traversal_edit_renders_byte_exact() {
    let problems = traversal_demos();
    let dfs = TraversalPolicy::dfs();
    let chains: Vec<ReasoningChain> = problems.iter().map(|pr| derive_chain(pr, &dfs).unwrap()).collect();
    let demos: Vec<(Problem, ReasoningChain)> = problems[..2].iter().cloned().zip(chains[..2].iter().cloned()).collect();
    let doc = render_prompt(&demos, (&problems[2], &chains[2], Cutoff::Full), dfs);
    let clean = fixture("traversal_edit", "clean");
    assert_eq!(doc.text, clean);
    assert_eq!(split_shots(&clean).len(), 3);
}

pub fn traversal_edit_corruption() {
    let problems = traversal_demos();
    let dfs = TraversalPolicy::dfs();
    let chains: Vec<ReasoningChain> = problems.iter().map(|pr| derive_chain(pr, &dfs).unwrap()).collect();
    let demos: Vec<(Problem, ReasoningChain)> = problems[..2].iter().cloned().zip(chains[..2].iter().cloned()).collect();
    let doc = render_prompt(&demos, (&problems[2], &chains[2], Cutoff::Full), dfs);
    let pair = corrupt_traversal(&doc).expect("depth-first demos flip to breadth-first");
    check_pair(&pair, "traversal_edit", CorruptionType::C4, ("O", "I"));
}

#[allow(dead_code)]
pub const CASES: [(&str, fn()); 8] = [
    ("fact_edit_renders_byte_exact", fact_edit_renders_byte_exact),
    ("fact_edit_corruption", fact_edit_corruption),
    ("termination_edit_renders_byte_exact", termination_edit_renders_byte_exact),
    ("termination_edit_corruption", termination_edit_corruption),
    ("rule_edit_renders_byte_exact", rule_edit_renders_byte_exact),
    ("rule_edit_corruption", rule_edit_corruption),
    ("traversal_edit_renders_byte_exact", traversal_edit_renders_byte_exact),
    ("traversal_edit_corruption", traversal_edit_corruption),
];
