// SPDX-License-Identifier: MIT OR Apache-2.0

//! Teacher-forced probabilities of a prompt, bucketed by reasoning role.

use circuitlab::eval::{uncertain_token_stats, LogprobTrace, UNCERTAIN_THRESHOLD};
use circuitlab::promptgen::{synth_dataset, Role, SynthConfig};
use circuitlab::protocol::{ForwardRequest, ModelBackend};
use circuitlab::toymodel::{ToyConfig, ToyModel};

fn main() {
    let model = ToyModel::new(ToyConfig::default());
    let record = &synth_dataset(&SynthConfig::new(1, 1, 4)).unwrap()[0];

    let tok = model.tokenize(&record.prompt_text).unwrap();
    let res = model.forward(&ForwardRequest { echo: true, ..ForwardRequest::new(record.prompt_text.as_str()) }).unwrap();
    let trace = LogprobTrace::from_echo(&record.prompt_text, &tok.offsets, &res.echo_logprobs.unwrap());
    let stats = uncertain_token_stats(&trace, &record.role_spans, 1, UNCERTAIN_THRESHOLD).unwrap();

    println!("{:<30} {:>9} {:>6}", "role", "uncertain", "total");
    for role in Role::ALL {
        let s = stats.role(role);
        println!("{:<30} {:>9} {:>6}", role.name(), s.uncertain, s.total);
    }
}
