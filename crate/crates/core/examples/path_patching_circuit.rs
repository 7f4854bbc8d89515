// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scores head-to-head edges with path patching and assembles the circuit
//! from the top heads of two roles.

use circuitlab::cma::{aie, circuit_network, path_patch, HeadRole, PositionMode};
use circuitlab::counterfactual::{generate_pairs, CorruptionType};
use circuitlab::logic::GenConfig;
use circuitlab::protocol::HeadId;
use circuitlab::toymodel::{ToyConfig, ToyModel};

fn main() {
    let model = ToyModel::new(ToyConfig::default());
    let gen = GenConfig::default();
    let c1 = generate_pairs(3, 0, CorruptionType::C1, 1, &gen).unwrap().pairs;
    let c3 = generate_pairs(3, 0, CorruptionType::C3, 1, &gen).unwrap().pairs;

    let edge = path_patch(&model, &c1, HeadId::new(0, 1), HeadId::new(2, 3), PositionMode::PrecedingToken).unwrap();
    println!("single edge {:?} -> {:?}: {:+.3e}", edge.emit, edge.rec, edge.score);
    assert!(path_patch(&model, &c1, HeadId::new(2, 0), HeadId::new(1, 0), PositionMode::PrecedingToken).is_err());

    let mut matrices = Vec::new();
    for (kind, pairs) in [(CorruptionType::C1, &c1), (CorruptionType::C3, &c3)] {
        for mode in [PositionMode::CausalSpan, PositionMode::PrecedingToken] {
            matrices.push(aie(&model, pairs, mode, HeadRole::from_kind_mode(kind, mode)).unwrap());
        }
    }
    let graph = circuit_network(&model, &matrices, &[(CorruptionType::C1, c1), (CorruptionType::C3, c3)], 2, 4).unwrap();
    for n in &graph.nodes {
        println!("node L{}H{}  {:?}", n.head.layer, n.head.head, n.roles);
    }
    for e in &graph.edges {
        println!("edge {} L{}H{} -> L{}H{}  {:+.3e}", e.kind, e.edge.emit.layer, e.edge.emit.head, e.edge.rec.layer, e.edge.rec.head, e.edge.score);
    }
}
