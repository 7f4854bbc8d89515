// SPDX-License-Identifier: MIT OR Apache-2.0

//! Module invariants as property tests.

use std::collections::BTreeMap;

use circuitlab::cma::{
    assemble_circuit, layer_role_score, select_top_heads, top_count, AIEMatrix, AblationConfig, AblationName, HeadRole,
    PathEdgeScore, PositionMode,
};
use circuitlab::counterfactual::{attempt_pair, check_structure, CorruptionType};
use circuitlab::eval::{inference_step_accuracy, uncertain_token_stats, LogprobTrace};
use circuitlab::logic::{
    closure, derive_chain, generate_problem, validate_chain, ChainStep, GenConfig, PremiseSet, Problem, Rule,
    TraversalPolicy,
};
use circuitlab::promptgen::{
    parse_shot, render_prompt, render_shot, shot_layout, split_shots, synth_doc, tag_roles, Cutoff, Role,
};
use circuitlab::protocol::HeadId;
use proptest::prelude::*;

fn naive_closure(rules: &[Rule]) -> PremiseSet {
    let mut s = PremiseSet::new();
    loop {
        let mut grew = false;
        for r in rules {
            if r.conditions.iter().all(|&c| s.contains(c)) {
                grew |= s.insert(r.conclusion);
            }
        }
        if !grew {
            return s;
        }
    }
}

fn policies() -> [TraversalPolicy; 2] {
    [TraversalPolicy::bfs(), TraversalPolicy::dfs()]
}

fn problem(seed: u64) -> Problem {
    generate_problem(seed, &GenConfig::default()).unwrap()
}

fn matrix(role: HeadRole, scores: Vec<Vec<f64>>) -> AIEMatrix {
    AIEMatrix { model_id: "m".into(), role, n_layers: scores.len(), n_heads: scores[0].len(), scores, n_pairs: 1, skipped: 0 }
}

fn score_grid() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..5, 1usize..7).prop_flat_map(|(l, j)| proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, j), l))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn generation_is_deterministic_and_within_bounds(seed in any::<u64>()) {
        let gen = GenConfig::default();
        let a = generate_problem(seed, &gen).unwrap();
        prop_assert_eq!(&a, &generate_problem(seed, &gen).unwrap());
        prop_assert!((gen.min_total..=gen.max_total).contains(&a.rules.len()));
        prop_assert!(a.validate().is_ok());
        prop_assert!(closure(&a.rules).contains(a.question));
        for (i, r) in a.rules.iter().enumerate() {
            prop_assert!(a.rules[..i].iter().all(|q| !q.same_content(r)));
        }
    }

    #[test]
    fn closure_matches_naive_fixpoint(seed in any::<u64>()) {
        let p = problem(seed);
        prop_assert_eq!(closure(&p.rules), naive_closure(&p.rules));
    }

    #[test]
    fn derived_chains_are_sound_and_monotone(seed in any::<u64>()) {
        let p = problem(seed);
        for pol in policies() {
            let c = derive_chain(&p, &pol).unwrap();
            let v = validate_chain(&p, &c);
            prop_assert!(v.all_valid());
            prop_assert!(c.verdict && v.final_verdict);
            let mut size = p.initial_kb().len();
            for s in c.inference_steps() {
                let kb = s.kb_after.as_ref().unwrap();
                prop_assert_eq!(kb.len(), size + 1);
                size += 1;
            }
        }
    }

    #[test]
    fn render_parse_round_trip(seed in any::<u64>()) {
        let p = problem(seed);
        for pol in policies() {
            let c = derive_chain(&p, &pol).unwrap();
            let (p2, c2, report) = parse_shot(&render_shot(&p, &c, Cutoff::Full)).unwrap();
            prop_assert!(report.is_clean());
            prop_assert_eq!(&p2, &p);
            prop_assert_eq!(c2, c);
        }
    }

    #[test]
    fn spans_partition_the_document_and_match_the_tagger(k in 0usize..4, seed in any::<u64>()) {
        let doc = synth_doc(k, seed, &GenConfig::default()).unwrap();
        let mut at = 0;
        for s in &doc.spans {
            prop_assert_eq!(s.start, at);
            prop_assert!(s.end > s.start);
            at = s.end;
        }
        prop_assert_eq!(at, doc.text.len());
        let non_syntax = |v: &[circuitlab::promptgen::RoleSpan]| {
            v.iter().filter(|s| s.role != Role::Syntax).map(|s| (s.role, s.start, s.end)).collect::<Vec<_>>()
        };
        prop_assert_eq!(non_syntax(&tag_roles(&doc.text)), non_syntax(&doc.spans));
        prop_assert_eq!(split_shots(&doc.text).len(), k + 1);
    }

    #[test]
    fn truncation_at_any_span_start_is_a_prefix(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let p = problem(seed);
        let c = derive_chain(&p, &TraversalPolicy::bfs()).unwrap();
        let layout = shot_layout(&p, &c);
        let cut = layout.spans[pick.index(layout.spans.len())].start;
        let doc = render_prompt(&[], (&p, &c, Cutoff::Byte(cut)), TraversalPolicy::bfs());
        prop_assert!(layout.text.starts_with(&doc.text));
        prop_assert_eq!(doc.text.len(), cut);
    }

    #[test]
    fn pairs_preserve_length_locality_and_divergence(seed in 0u64..1_000_000, kind in 0usize..4) {
        let kind = CorruptionType::ALL[kind];
        let gen = GenConfig::default();
        if let Some(pair) = (0..12).find_map(|a| attempt_pair(2, kind, seed, a, &gen)) {
            prop_assert!(check_structure(&pair).is_ok());
            prop_assert_eq!(pair.clean_text.len(), pair.corrupted_text.len());
            prop_assert_ne!(&pair.clean_target, &pair.corrupted_target);
            let (a, b) = (pair.clean_text.as_bytes(), pair.corrupted_text.as_bytes());
            for i in (0..a.len()).filter(|&i| a[i] != b[i]) {
                prop_assert!(pair.causal_spans.iter().any(|[s, e]| (*s..*e).contains(&i)), "byte {} differs outside spans", i);
            }
            if kind == CorruptionType::C4 {
                let clean = split_shots(&pair.clean_text);
                let corr = split_shots(&pair.corrupted_text);
                for (c, d) in clean.iter().zip(&corr).take(clean.len() - 1) {
                    prop_assert_eq!(c.matches("=> F(").count(), d.matches("=> F(").count());
                }
            }
        }
    }

    #[test]
    fn top_heads_equal_a_full_sort(grid in score_grid(), k in 0usize..30) {
        let m = matrix(HeadRole::ReadRule, grid);
        let mut all: Vec<(f64, HeadId)> = m.heads().map(|h| (m.score(h), h)).collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<HeadId> = all.into_iter().take(k).map(|x| x.1).collect();
        prop_assert_eq!(select_top_heads(&m, k), want);
    }

    #[test]
    fn top_count_is_an_exact_ceiling(n in 1usize..200, pct_num in 1usize..=100) {
        let want = (pct_num * n).div_ceil(100).max(1);
        prop_assert_eq!(top_count(n, pct_num as f64 / 100.0), want);
    }

    #[test]
    fn layer_scores_sit_between_row_mean_and_row_max(grid in score_grid(), pct in 0.01f64..1.0) {
        let m = matrix(HeadRole::SelectRule, grid.clone());
        for (row, s) in grid.iter().zip(layer_role_score(&m, pct)) {
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            prop_assert!(s <= max + 1e-12 && s >= mean - 1e-12);
        }
    }

    #[test]
    fn circuits_keep_ordered_edges_between_nodes(grid in score_grid(), raw in proptest::collection::vec((0usize..4, 0usize..6, 0usize..4, 0usize..6, -1.0f64..1.0), 0..40), top in 1usize..6, top_e in 0usize..12) {
        let (l, j) = (grid.len(), grid[0].len());
        let m = matrix(HeadRole::ReadFact, grid);
        let edges: Vec<PathEdgeScore> = raw
            .into_iter()
            .map(|(a, b, c, d, s)| PathEdgeScore { emit: HeadId::new(a % l, b % j), rec: HeadId::new(c % l, d % j), score: s, n_pairs: 1, kind: Some(CorruptionType::C1) })
            .collect();
        let g = assemble_circuit(&[m], &[(CorruptionType::C1, PositionMode::CausalSpan, edges)], top, top_e);
        prop_assert!(g.nodes.len() <= top);
        prop_assert!(g.edges.len() <= top_e);
        for e in &g.edges {
            prop_assert!(e.edge.emit.layer < e.edge.rec.layer);
            prop_assert!(g.node(e.edge.emit).is_some() && g.node(e.edge.rec).is_some());
        }
        prop_assert!(g.edges.windows(2).all(|w| w[0].edge.score >= w[1].edge.score));
    }

    #[test]
    fn random_ablation_draws_are_seeded_and_distinct(l in 1usize..40, j in 1usize..40, seed in any::<u64>()) {
        let cfg = AblationConfig { seed, ..AblationConfig::new(AblationName::Rand) };
        let sets = cfg.head_sets(&BTreeMap::new(), l, j).unwrap();
        prop_assert_eq!(&sets, &cfg.head_sets(&BTreeMap::new(), l, j).unwrap());
        prop_assert_eq!(sets.len(), 3);
        let want = ((0.03 * (l * j) as f64).round() as usize).max(1);
        for s in &sets {
            prop_assert_eq!(s.len(), want);
            let mut d = s.clone();
            d.sort();
            d.dedup();
            prop_assert_eq!(d.len(), s.len());
            prop_assert!(s.iter().all(|h| h.layer < l && h.head < j));
        }
    }

    #[test]
    fn gold_scores_one_and_a_wrong_rule_id_costs_one_step(seed in any::<u64>(), which in any::<prop::sample::Index>(), other in any::<prop::sample::Index>()) {
        let p = problem(seed);
        let gold = derive_chain(&p, &TraversalPolicy::bfs()).unwrap();
        let acc = inference_step_accuracy(&render_shot(&p, &gold, Cutoff::Full), &p, &gold);
        prop_assert_eq!((acc.lenient, acc.strict), (1.0, 1.0));

        let n = gold.steps.len();
        let i = which.index(n);
        let mut bad = gold.clone();
        let ChainStep::Inference(step) = &mut bad.steps[i] else { unreachable!() };
        let ids: Vec<u32> = p.rules.iter().map(|r| r.id).filter(|&id| id != step.rule_id).collect();
        step.rule_id = ids[other.index(ids.len())];
        let acc = inference_step_accuracy(&render_shot(&p, &bad, Cutoff::Full), &p, &gold);
        prop_assert_eq!(acc.lenient, (n - 1) as f64 / n as f64);
        prop_assert!(acc.strict <= acc.lenient);
    }

    #[test]
    fn accuracies_are_bounded_and_lenient_dominates(seed in any::<u64>(), noise in proptest::collection::vec(any::<prop::sample::Index>(), 0..6), cut in any::<prop::sample::Index>()) {
        let p = problem(seed);
        let gold = derive_chain(&p, &TraversalPolicy::bfs()).unwrap();
        let mut text = render_shot(&p, &gold, Cutoff::Full).into_bytes();
        // scramble a few bytes and truncate
        for ix in &noise {
            let i = ix.index(text.len());
            text[i] = b"ABC]'1,\n"[i % 8];
        }
        text.truncate(cut.index(text.len() + 1));
        let text = String::from_utf8(text).unwrap();
        let acc = inference_step_accuracy(&text, &p, &gold);
        prop_assert!((0.0..=1.0).contains(&acc.lenient) && (0.0..=1.0).contains(&acc.strict));
        prop_assert!(acc.lenient >= acc.strict);
    }

    #[test]
    fn raising_the_threshold_never_lowers_uncertain_counts(seed in any::<u64>(), lps in proptest::collection::vec(-6.0f64..0.0, 2000), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let doc = synth_doc(1, seed, &GenConfig::default()).unwrap();
        let offsets: Vec<[usize; 2]> = (0..doc.text.len()).map(|i| [i, i + 1]).collect();
        let echo: Vec<Option<f64>> = (0..doc.text.len()).map(|i| (i > 0).then(|| lps[i % lps.len()])).collect();
        let trace = LogprobTrace::from_echo(&doc.text, &offsets, &echo);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = uncertain_token_stats(&trace, &doc.spans, 2, lo).unwrap();
        let b = uncertain_token_stats(&trace, &doc.spans, 2, hi).unwrap();
        for role in Role::ALL {
            prop_assert!(a.role(role).uncertain <= b.role(role).uncertain);
            prop_assert!(b.role(role).uncertain <= b.role(role).total);
            prop_assert_eq!(a.role(role).total, b.role(role).total);
        }
    }
}
