// SPDX-License-Identifier: MIT OR Apache-2.0

//! The toy transformer's hooks: capture a head, zero it, patch it back, and
//! check that the residual stream is the sum of its parts.

use circuitlab::protocol::{ForwardRequest, HeadId, ModelBackend};
use circuitlab::toymodel::{CharTokenizer, Hooks, ToyConfig, ToyModel};

fn main() {
    let model = ToyModel::new(ToyConfig { max_seq_len: 256, ..ToyConfig::default() });
    println!("{}  sha256 {}", model.model_id(), &model.checksum()[..16]);

    let text = "Rules:\nF(1): A\nR(2): A -> B\n";
    let tokens = CharTokenizer::encode(text).unwrap();
    let last = tokens.len() - 1;
    let head = HeadId::new(1, 2);

    let trace = model.trace(&tokens, &Hooks::default());
    let mut sum = trace.hidden[0].row(last).to_owned();
    for l in 0..model.config.n_layers {
        for out in &trace.head_out[l] {
            sum += &out.row(last);
        }
        sum += &trace.mlp_out[l].row(last);
    }
    let gap = (&sum - &trace.hidden[model.config.n_layers].row(last)).iter().fold(0f32, |m, x| m.max(x.abs()));
    println!("residual decomposition max gap {gap:.2e}");

    // the same operations over the wire types
    let base = model.forward(&ForwardRequest::new(text).logprobs_at(last, &["F", "R"]).capture(head, vec![last])).unwrap();
    let acts = base.captured(head).unwrap().values.0.clone();
    let zeroed = model.forward(&ForwardRequest::new(text).logprobs_at(last, &["F", "R"]).ablate([head])).unwrap();
    let restored = model.forward(&ForwardRequest::new(text).logprobs_at(last, &["F", "R"]).patch(head, vec![last], acts)).unwrap();
    for (name, r) in [("clean", &base), ("ablated", &zeroed), ("self-patched", &restored)] {
        println!("{name:<13} log p(F) = {:.6}  log p(R) = {:.6}", r.logprob(last, "F").unwrap(), r.logprob(last, "R").unwrap());
    }
}
