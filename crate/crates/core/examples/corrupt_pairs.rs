// SPDX-License-Identifier: MIT OR Apache-2.0

//! Builds a few counterfactual pairs of every type and shows where the
//! clean and corrupted prompts diverge.

use circuitlab::counterfactual::{check_structure, generate_pairs, CorruptionType};
use circuitlab::logic::GenConfig;

fn main() {
    let gen = GenConfig::default();
    for kind in CorruptionType::ALL {
        let set = generate_pairs(3, 2, kind, 5, &gen).expect("enough pairs");
        println!("{kind}: {} pairs, yield {:.2}", set.pairs.len(), set.yield_ratio());
        let p = &set.pairs[0];
        check_structure(p).unwrap();
        let [s, e] = p.component_span;
        println!("  target {:?} -> {:?} at bytes {s}..{e}", p.clean_target, p.corrupted_target);
        for [a, b] in p.causal_spans.iter().take(3) {
            println!("  span {a}..{b}: {:?} / {:?}", &p.clean_text[*a..*b], &p.corrupted_text[*a..*b]);
        }
    }
}
