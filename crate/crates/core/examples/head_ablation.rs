// SPDX-License-Identifier: MIT OR Apache-2.0

//! Greedy generation with heads knocked out, scored against the gold chain.

use std::collections::BTreeMap;

use circuitlab::cma::{ablate_eval, aie, role_heads, AblationConfig, AblationName, HeadRole, PositionMode};
use circuitlab::counterfactual::{generate_pairs, CorruptionType};
use circuitlab::logic::GenConfig;
use circuitlab::promptgen::{synth_dataset, SynthConfig};
use circuitlab::protocol::{GenerateRequest, ModelBackend};
use circuitlab::toymodel::{ToyConfig, ToyModel};

fn main() {
    let model = ToyModel::new(ToyConfig::default());
    let records = synth_dataset(&SynthConfig::new(0, 3, 21)).unwrap();

    let g = model.generate(&GenerateRequest::new(records[0].generation_prompt(), 40)).unwrap();
    println!("untrained continuation: {:?}", g.text);

    let pairs = generate_pairs(3, 0, CorruptionType::C1, 2, &GenConfig::default()).unwrap().pairs;
    let matrices: Vec<_> = [PositionMode::CausalSpan, PositionMode::PrecedingToken]
        .into_iter()
        .map(|mode| aie(&model, &pairs, mode, HeadRole::from_kind_mode(CorruptionType::C1, mode)).unwrap())
        .collect();
    let heads = role_heads(&matrices, 2);

    for name in [AblationName::Baseline, AblationName::Ps, AblationName::Rand] {
        let cfg = AblationConfig { rand_runs: 2, rand_fraction: 0.1, ..AblationConfig::new(name) };
        let rh = if name == AblationName::Rand { BTreeMap::new() } else { heads.clone() };
        let m = ablate_eval(&model, &records, "k0", &cfg, &rh).unwrap();
        for row in m.rows() {
            println!("{:<9} {:<24} {:.3}", row.config, row.metric, row.value);
        }
    }
}
