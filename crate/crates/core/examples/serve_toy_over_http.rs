// SPDX-License-Identifier: MIT OR Apache-2.0

//! Serves the toy model on a loopback port and drives it through the HTTP
//! client, the same path a remote gateway takes.

use std::sync::Arc;

use circuitlab::protocol::{serve, ForwardRequest, HttpBackend, ModelBackend};
use circuitlab::toymodel::{ToyConfig, ToyModel};

fn main() {
    let model = Arc::new(ToyModel::new(ToyConfig { max_seq_len: 512, ..ToyConfig::default() }));
    let server = serve(model.clone(), "127.0.0.1:0").unwrap();
    let client = HttpBackend::new(&server.url());

    let caps = client.capabilities().unwrap();
    println!("{} at {}: {} layers x {} heads, tokenizer {}", caps.model_id, server.url(), caps.n_layers, caps.n_heads, caps.tokenizer_fingerprint);

    let req = ForwardRequest::new("Question: B\n").logprobs_at(11, &["A", "B", "C"]);
    let remote = client.forward(&req).unwrap();
    let local = model.forward(&req).unwrap();
    assert_eq!(remote.logprobs, local.logprobs);
    println!("{:?}", remote.logprobs[0]);

    let err = client.forward(&ForwardRequest::new("naïve")).unwrap_err();
    println!("rejected: {} ({})", err, err.kind());
    server.shutdown();
}
