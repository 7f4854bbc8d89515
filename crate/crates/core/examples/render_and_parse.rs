// SPDX-License-Identifier: MIT OR Apache-2.0

//! Renders one problem under both traversals, parses it back, and shows the
//! character roles of the first inference step.

use circuitlab::logic::{derive_chain, generate_problem, validate_chain, GenConfig, TraversalPolicy};
use circuitlab::promptgen::{parse_shot, render_shot, shot_layout, Cutoff, Role};

fn main() {
    let gen = GenConfig::default();
    let problem = generate_problem(11, &gen).unwrap();

    for policy in [TraversalPolicy::bfs(), TraversalPolicy::dfs()] {
        let chain = derive_chain(&problem, &policy).unwrap();
        let text = render_shot(&problem, &chain, Cutoff::Full);
        let (p2, c2, report) = parse_shot(&text).unwrap();
        assert!(report.is_clean() && p2 == problem && c2 == chain);
        println!("{:?}: {} steps, all valid = {}", policy.kind, chain.len(), validate_chain(&problem, &chain).all_valid());
    }

    let chain = derive_chain(&problem, &TraversalPolicy::bfs()).unwrap();
    let layout = shot_layout(&problem, &chain);
    println!("\n{}", layout.text);
    for s in layout.spans.iter().filter(|s| s.step_index == Some(0) && s.role != Role::Syntax && s.role != Role::PremiseInKb) {
        println!("{:<30} {:?}", s.role.name(), &layout.text[s.range()]);
    }
}
