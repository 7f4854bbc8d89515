// SPDX-License-Identifier: MIT OR Apache-2.0

//! Patching scores checked against direct computations on the toy model's
//! internal trace, bypassing the wire types.
//!
//! The trace computes logits for every position while a forward request
//! computes only the rows it needs, so the two agree to f32 rounding of the
//! probabilities (about 1e-9 here), not bit for bit.

use circuitlab::cma::{aie, aie_per_pair, circuit_network, path_patch, path_scores, HeadRole, PositionMode};
use circuitlab::counterfactual::{generate_pairs, CorruptionType, PairRecord};
use circuitlab::logic::GenConfig;
use circuitlab::protocol::HeadId;
use circuitlab::toymodel::{CharTokenizer, Hooks, ToyConfig, ToyModel};

/// Absolute tolerance on probability deltas; scores themselves are ~1e-6.
const TOL: f64 = 1e-8;

fn model() -> ToyModel {
    ToyModel::new(ToyConfig { max_seq_len: 1024, ..ToyConfig::default() })
}

fn pairs(kind: CorruptionType, n: usize, seed: u64) -> Vec<PairRecord> {
    generate_pairs(n, 0, kind, seed, &GenConfig::default()).unwrap().pairs
}

/// Softmax probability of `target` after the last token, from raw logits.
fn prob(m: &ToyModel, text: &str, hooks: &Hooks, target: &str) -> f64 {
    let tokens = CharTokenizer::encode(text).unwrap();
    let trace = m.trace(&tokens, hooks);
    let row = trace.logits.row(tokens.len() - 1);
    let max = row.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x as f64));
    let z: f64 = row.iter().map(|&x| (x as f64 - max).exp()).sum();
    let t = CharTokenizer::id(target.chars().next().unwrap()).unwrap() as usize;
    (row[t] as f64 - max).exp() / z
}

fn positions(pair: &PairRecord, mode: PositionMode) -> Vec<usize> {
    match mode {
        PositionMode::CausalSpan => pair.causal_spans.iter().flat_map(|[s, e]| *s..*e).collect(),
        PositionMode::PrecedingToken => vec![pair.preceding_char],
    }
}

/// Rows of `head`'s contribution at `pos` in a run of `text` under `hooks`.
fn head_rows(m: &ToyModel, text: &str, hooks: &Hooks, head: HeadId, pos: &[usize]) -> Vec<Vec<f32>> {
    let trace = m.trace(&CharTokenizer::encode(text).unwrap(), hooks);
    pos.iter().map(|&p| trace.head_out[head.layer][head.head].row(p).to_vec()).collect()
}

fn patched(head: HeadId, pos: &[usize], rows: Vec<Vec<f32>>) -> Hooks {
    let mut h = Hooks::default();
    for (&p, r) in pos.iter().zip(rows) {
        h.patch(head, p, r);
    }
    h
}

fn heads(m: &ToyModel) -> Vec<HeadId> {
    let c = &m.config;
    (0..c.n_layers).flat_map(|l| (0..c.n_heads).map(move |j| HeadId::new(l, j))).collect()
}

fn oracle_aie_delta(m: &ToyModel, pair: &PairRecord, mode: PositionMode, head: HeadId) -> f64 {
    let pos = positions(pair, mode);
    let clean = head_rows(m, &pair.clean_text, &Hooks::default(), head, &pos);
    prob(m, &pair.corrupted_text, &patched(head, &pos, clean), &pair.clean_target)
        - prob(m, &pair.corrupted_text, &Hooks::default(), &pair.clean_target)
}

fn oracle_path_delta(m: &ToyModel, pair: &PairRecord, mode: PositionMode, emit: HeadId, rec: HeadId) -> f64 {
    let pos = positions(pair, mode);
    let corrupted_emit = head_rows(m, &pair.corrupted_text, &Hooks::default(), emit, &pos);
    let rec_rows = head_rows(m, &pair.clean_text, &patched(emit, &pos, corrupted_emit), rec, &pos);
    prob(m, &pair.clean_text, &patched(rec, &pos, rec_rows), &pair.clean_target)
        - prob(m, &pair.clean_text, &Hooks::default(), &pair.clean_target)
}

#[test]
fn aie_matches_direct_trace_computation() {
    let m = model();
    for (kind, mode) in [(CorruptionType::C1, PositionMode::CausalSpan), (CorruptionType::C3, PositionMode::PrecedingToken)] {
        let ps = pairs(kind, 2, 11);
        let matrix = aie(&m, &ps, mode, HeadRole::from_kind_mode(kind, mode)).unwrap();
        assert_eq!((matrix.n_pairs, matrix.skipped), (ps.len(), 0));
        for h in heads(&m) {
            let want = ps.iter().map(|p| oracle_aie_delta(&m, p, mode, h)).sum::<f64>() / ps.len() as f64;
            let got = matrix.score(h);
            assert!((got - want).abs() < TOL, "{kind} {mode:?} {h:?}: {got} vs {want}");
        }
        let peak = heads(&m).into_iter().map(|h| matrix.score(h).abs()).fold(0.0, f64::max);
        assert!(peak > 10.0 * TOL, "{kind} {mode:?}: no signal above tolerance ({peak})");
    }
}

#[test]
fn per_pair_deltas_average_to_the_matrix() {
    let m = model();
    let ps = pairs(CorruptionType::C2, 3, 4);
    let per = aie_per_pair(&m, &ps, PositionMode::PrecedingToken).unwrap();
    let matrix = aie(&m, &ps, PositionMode::PrecedingToken, HeadRole::MatchRuleCondition).unwrap();
    for (i, h) in heads(&m).into_iter().enumerate() {
        let mean = per.iter().map(|p| p.deltas.as_ref().unwrap()[i]).sum::<f64>() / per.len() as f64;
        assert!((matrix.score(h) - mean).abs() < 1e-15);
    }
}

#[test]
fn path_scores_match_three_pass_oracle() {
    let m = model();
    let ps = pairs(CorruptionType::C1, 2, 8);
    let edges = [(HeadId::new(0, 0), HeadId::new(1, 3)), (HeadId::new(0, 2), HeadId::new(2, 1)), (HeadId::new(1, 1), HeadId::new(2, 2))];
    for mode in [PositionMode::CausalSpan, PositionMode::PrecedingToken] {
        let scores = path_scores(&m, &ps, &edges, mode).unwrap();
        for (s, &(emit, rec)) in scores.iter().zip(&edges) {
            assert_eq!((s.emit, s.rec, s.n_pairs), (emit, rec, ps.len()));
            let want = ps.iter().map(|p| oracle_path_delta(&m, p, mode, emit, rec)).sum::<f64>() / ps.len() as f64;
            assert!((s.score - want).abs() < TOL, "{mode:?} {emit:?}->{rec:?}: {} vs {want}", s.score);
        }
    }
}

#[test]
fn circuit_edges_equal_exhaustive_path_patching() {
    let m = model();
    let c1 = pairs(CorruptionType::C1, 2, 5);
    let c3 = pairs(CorruptionType::C3, 2, 5);
    let mut matrices = Vec::new();
    for (kind, ps) in [(CorruptionType::C1, &c1), (CorruptionType::C3, &c3)] {
        for mode in [PositionMode::CausalSpan, PositionMode::PrecedingToken] {
            matrices.push(aie(&m, ps, mode, HeadRole::from_kind_mode(kind, mode)).unwrap());
        }
    }
    let top_edges = 10;
    let graph = circuit_network(&m, &matrices, &[(CorruptionType::C1, c1.clone()), (CorruptionType::C3, c3.clone())], 3, top_edges).unwrap();

    for (kind, ps) in [(CorruptionType::C1, &c1), (CorruptionType::C3, &c3)] {
        let reader = HeadRole::for_kind(kind).0;
        let mut want = Vec::new();
        for a in &graph.nodes {
            for b in &graph.nodes {
                if a.head.layer >= b.head.layer {
                    continue;
                }
                let mode = if a.roles.contains(&reader) { PositionMode::CausalSpan } else { PositionMode::PrecedingToken };
                let s = path_patch(&m, ps, a.head, b.head, mode).unwrap();
                want.push((s.score, a.head, b.head));
            }
        }
        want.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
        want.truncate(top_edges);
        let got: Vec<(f64, HeadId, HeadId)> =
            graph.edges.iter().filter(|e| e.kind == kind).map(|e| (e.edge.score, e.edge.emit, e.edge.rec)).collect();
        assert_eq!(got, want, "{kind}");
    }
}

#[test]
fn layer_order_is_enforced() {
    let m = model();
    let ps = pairs(CorruptionType::C1, 1, 0);
    assert!(path_patch(&m, &ps, HeadId::new(1, 0), HeadId::new(1, 2), PositionMode::PrecedingToken).is_err());
    assert!(path_patch(&m, &ps, HeadId::new(2, 0), HeadId::new(0, 2), PositionMode::PrecedingToken).is_err());
}
