// SPDX-License-Identifier: MIT OR Apache-2.0

//! Draws a small 3-shot dataset and prints the first record.
//!
//! ```text
//! cargo run --example synth_dataset -- 3 4
//! ```

use circuitlab::promptgen::{synth_dataset, SynthConfig};

fn main() {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("numeric argument"));
    let k = args.next().unwrap_or(3);
    let n = args.next().unwrap_or(4);
    let records = synth_dataset(&SynthConfig::new(k, n, 7)).expect("generation within the attempt budget");

    let first = &records[0];
    println!("{}", first.prompt_text);
    println!("---");
    for r in &records {
        let rules = r.problem().rules.len();
        println!("{}  rules={rules:<2} steps={}  question={}", r.id, r.gold_chain.len(), r.question.as_char());
    }
}
