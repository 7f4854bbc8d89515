// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{path_scores, select_top_heads, AIEMatrix, CmaError, HeadRole, PathEdgeScore, PositionMode};
use crate::counterfactual::{CorruptionType, PairRecord};
use crate::protocol::{HeadId, ModelBackend};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitNode {
    pub head: HeadId,
    /// Several roles mark a polysemantic head.
    pub roles: Vec<HeadRole>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitEdge {
    pub kind: CorruptionType,
    pub mode: PositionMode,
    #[serde(flatten)]
    pub edge: PathEdgeScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircuitGraph {
    pub model_id: String,
    pub top_heads: usize,
    pub top_edges: usize,
    pub nodes: Vec<CircuitNode>,
    pub edges: Vec<CircuitEdge>,
}

impl CircuitGraph {
    pub fn node(&self, head: HeadId) -> Option<&CircuitNode> {
        self.nodes.iter().find(|n| n.head == head)
    }
}

fn nodes_of(matrices: &[AIEMatrix], top_heads: usize) -> Vec<CircuitNode> {
    let mut by_head: BTreeMap<HeadId, Vec<HeadRole>> = BTreeMap::new();
    for m in matrices {
        for h in select_top_heads(m, top_heads) {
            let roles = by_head.entry(h).or_default();
            if !roles.contains(&m.role) {
                roles.push(m.role);
            }
        }
    }
    by_head
        .into_iter()
        .map(|(head, mut roles)| {
            roles.sort();
            CircuitNode { head, roles }
        })
        .collect()
}

/// Patch positions for an edge under corruption `kind`: the causal span when
/// the emitter is one of the kind's reading heads, else the preceding token.
fn edge_mode(nodes: &[CircuitNode], kind: CorruptionType, emit: HeadId) -> PositionMode {
    let read = HeadRole::for_kind(kind).0;
    match nodes.iter().find(|n| n.head == emit) {
        Some(n) if n.roles.contains(&read) => PositionMode::CausalSpan,
        _ => PositionMode::PrecedingToken,
    }
}

fn candidate_edges(nodes: &[CircuitNode]) -> Vec<(HeadId, HeadId)> {
    let mut out = Vec::new();
    for a in nodes {
        for b in nodes {
            if a.head.layer < b.head.layer {
                out.push((a.head, b.head));
            }
        }
    }
    out
}

fn strongest(mut edges: Vec<CircuitEdge>, top_edges: usize) -> Vec<CircuitEdge> {
    edges.sort_by(|a, b| {
        b.edge.score.total_cmp(&a.edge.score).then((a.edge.emit, a.edge.rec).cmp(&(b.edge.emit, b.edge.rec)))
    });
    edges.truncate(top_edges);
    edges
}

/// Builds the graph from precomputed scores: nodes are the union of each
/// role's top heads; per corruption type, the strongest edges between nodes
/// in increasing layer order are kept.
pub fn assemble_circuit(
    matrices: &[AIEMatrix],
    edges: &[(CorruptionType, PositionMode, Vec<PathEdgeScore>)],
    top_heads: usize,
    top_edges: usize,
) -> CircuitGraph {
    let nodes = nodes_of(matrices, top_heads);
    let is_node = |h: HeadId| nodes.iter().any(|n| n.head == h);
    let mut kept = Vec::new();
    for kind in CorruptionType::ALL {
        let of_kind: Vec<CircuitEdge> = edges
            .iter()
            .filter(|(k, _, _)| *k == kind)
            .flat_map(|(k, mode, es)| es.iter().map(move |e| CircuitEdge { kind: *k, mode: *mode, edge: e.clone() }))
            .filter(|e| e.edge.emit.layer < e.edge.rec.layer && is_node(e.edge.emit) && is_node(e.edge.rec))
            .collect();
        kept.extend(strongest(of_kind, top_edges));
    }
    CircuitGraph {
        model_id: matrices.first().map(|m| m.model_id.clone()).unwrap_or_default(),
        top_heads,
        top_edges,
        nodes,
        edges: kept,
    }
}

/// Selects nodes, path-patches every ordered node pair for each corruption
/// type, and keeps the strongest edges.
pub fn circuit_network(
    backend: &dyn ModelBackend,
    matrices: &[AIEMatrix],
    pairs: &[(CorruptionType, Vec<PairRecord>)],
    top_heads: usize,
    top_edges: usize,
) -> Result<CircuitGraph, CmaError> {
    let nodes = nodes_of(matrices, top_heads);
    let candidates = candidate_edges(&nodes);
    let mut scored = Vec::new();
    for (kind, kind_pairs) in pairs {
        for mode in [PositionMode::CausalSpan, PositionMode::PrecedingToken] {
            let es: Vec<(HeadId, HeadId)> =
                candidates.iter().copied().filter(|&(e, _)| edge_mode(&nodes, *kind, e) == mode).collect();
            if es.is_empty() {
                continue;
            }
            let mut scores = path_scores(backend, kind_pairs, &es, mode)?;
            for s in &mut scores {
                s.kind = Some(*kind);
            }
            scored.push((*kind, mode, scores));
        }
    }
    Ok(assemble_circuit(matrices, &scored, top_heads, top_edges))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(role: HeadRole, scores: Vec<Vec<f64>>) -> AIEMatrix {
        AIEMatrix { model_id: "t".into(), role, n_layers: scores.len(), n_heads: scores[0].len(), scores, n_pairs: 1, skipped: 0 }
    }

    #[test]
    fn zero_matrix_gives_tie_order_nodes() {
        let g = assemble_circuit(&[matrix(HeadRole::ReadFact, vec![vec![0.0; 4]; 3])], &[], 5, 10);
        let heads: Vec<HeadId> = g.nodes.iter().map(|n| n.head).collect();
        assert_eq!(heads, vec![HeadId::new(0, 0), HeadId::new(0, 1), HeadId::new(0, 2), HeadId::new(0, 3), HeadId::new(1, 0)]);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn shared_head_carries_two_roles() {
        let mut a = vec![vec![0.0; 3]; 2];
        a[1][2] = 0.9;
        let mut b = vec![vec![0.0; 3]; 2];
        b[1][2] = 0.5;
        let g = assemble_circuit(&[matrix(HeadRole::ReadFact, a), matrix(HeadRole::SelectRule, b)], &[], 1, 10);
        assert_eq!(g.nodes.len(), 1);
        assert_eq!(g.nodes[0].roles, vec![HeadRole::ReadFact, HeadRole::SelectRule]);
    }

    #[test]
    fn edges_filtered_and_truncated() {
        let m = matrix(HeadRole::ReadFact, vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]);
        let e = |a: (usize, usize), b: (usize, usize), s: f64| PathEdgeScore {
            emit: HeadId::new(a.0, a.1),
            rec: HeadId::new(b.0, b.1),
            score: s,
            n_pairs: 1,
            kind: None,
        };
        let scores = vec![e((0, 0), (1, 0), 0.1), e((0, 1), (2, 1), 0.3), e((1, 0), (1, 1), 0.9), e((0, 0), (2, 0), 0.3)];
        let g = assemble_circuit(&[m], &[(CorruptionType::C1, PositionMode::CausalSpan, scores)], 6, 2);
        let got: Vec<(HeadId, HeadId)> = g.edges.iter().map(|c| (c.edge.emit, c.edge.rec)).collect();
        assert_eq!(got, vec![(HeadId::new(0, 0), HeadId::new(2, 0)), (HeadId::new(0, 1), HeadId::new(2, 1))]);
    }
}
