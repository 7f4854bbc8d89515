// SPDX-License-Identifier: MIT OR Apache-2.0

//! Average indirect effect of every toy head for fact-corruption pairs,
//! under both position modes.

use circuitlab::cma::{aie, select_top_heads, HeadRole, PositionMode};
use circuitlab::counterfactual::{generate_pairs, CorruptionType};
use circuitlab::logic::GenConfig;
use circuitlab::toymodel::{ToyConfig, ToyModel};

fn main() {
    let model = ToyModel::new(ToyConfig::default());
    // zero-shot pairs keep the prompts short
    let pairs = generate_pairs(4, 0, CorruptionType::C1, 3, &GenConfig::default()).unwrap().pairs;

    for mode in [PositionMode::CausalSpan, PositionMode::PrecedingToken] {
        let role = HeadRole::from_kind_mode(CorruptionType::C1, mode);
        let m = aie(&model, &pairs, mode, role).unwrap();
        println!("{role} over {} pairs ({} skipped)", m.n_pairs, m.skipped);
        for (l, row) in m.scores.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|s| format!("{s:+.2e}")).collect();
            println!("  L{l}  {}", cells.join("  "));
        }
        println!("  top 3: {:?}", select_top_heads(&m, 3));
    }
}
