// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashSet;

use super::forward::{log_softmax, Hooks};
use super::{CharTokenizer, ToyModel};
use crate::protocol::{
    check_version, validate_forward, Capabilities, Captured, F32Array, ForwardRequest, ForwardResult, GenerateRequest,
    GenerateResult, HeadId, LogprobResult, ModelBackend, ProtocolError, TokenizeResult, PROTOCOL_VERSION,
};

fn first_token(candidate: &str) -> Result<u32, ProtocolError> {
    let c = candidate.chars().next().ok_or_else(|| ProtocolError::Shape("empty candidate".into()))?;
    CharTokenizer::id(c).ok_or(ProtocolError::UnknownChar { ch: c, offset: 0 })
}

impl ModelBackend for ToyModel {
    fn capabilities(&self) -> Result<Capabilities, ProtocolError> {
        let c = &self.config;
        Ok(Capabilities {
            protocol_version: PROTOCOL_VERSION.to_string(),
            model_id: self.model_id(),
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            hidden_width: c.hidden(),
            head_width: c.head_width,
            max_seq_len: c.max_seq_len,
            tokenizer_fingerprint: CharTokenizer::fingerprint(),
            float_tolerance: 1e-6,
        })
    }

    fn tokenize(&self, text: &str) -> Result<TokenizeResult, ProtocolError> {
        let tokens = CharTokenizer::encode(text)?;
        // every vocabulary character is one byte
        let offsets = (0..tokens.len()).map(|i| [i, i + 1]).collect();
        Ok(TokenizeResult { tokens, offsets })
    }

    fn forward(&self, req: &ForwardRequest) -> Result<ForwardResult, ProtocolError> {
        let tokens = CharTokenizer::encode(&req.prompt)?;
        if tokens.is_empty() {
            return Err(ProtocolError::Shape("empty prompt".into()));
        }
        validate_forward(req, &self.capabilities()?, tokens.len())?;
        let d = self.config.hidden();
        let mut hooks = Hooks::ablating(req.ablate.iter().copied());
        for p in &req.patches {
            for (i, &pos) in p.positions.iter().enumerate() {
                hooks.patch(HeadId::new(p.layer, p.head), pos, p.values.0[i * d..(i + 1) * d].to_vec());
            }
        }
        for c in &req.captures {
            hooks.capture(HeadId::new(c.layer, c.head), c.positions.clone());
        }
        let candidate_ids = req
            .return_logprobs_at
            .iter()
            .map(|q| q.candidates.iter().map(|c| first_token(c)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;

        let out = self.run(&tokens, &hooks, false, false);
        let lp_at = |pos: usize| log_softmax(self.logits_row(out.final_hidden.row(pos)).view());
        let logprobs = req
            .return_logprobs_at
            .iter()
            .zip(&candidate_ids)
            .map(|(q, ids)| {
                let lp = lp_at(q.position);
                LogprobResult {
                    position: q.position,
                    candidates: q.candidates.clone(),
                    logprobs: ids.iter().map(|&i| lp[i as usize]).collect(),
                }
            })
            .collect();
        let echo_logprobs = req.echo.then(|| {
            std::iter::once(None)
                .chain((1..tokens.len()).map(|t| Some(lp_at(t - 1)[tokens[t] as usize])))
                .collect()
        });
        let captures = req
            .captures
            .iter()
            .zip(out.captures)
            .map(|(c, values)| Captured { layer: c.layer, head: c.head, positions: c.positions.clone(), values: F32Array(values) })
            .collect();
        Ok(ForwardResult {
            protocol_version: PROTOCOL_VERSION.to_string(),
            request_id: req.request_id.clone(),
            n_tokens: tokens.len(),
            captures,
            logprobs,
            echo_logprobs,
        })
    }

    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResult, ProtocolError> {
        check_version(&req.protocol_version)?;
        let caps = self.capabilities()?;
        for h in &req.ablate {
            if h.layer >= caps.n_layers || h.head >= caps.n_heads {
                return Err(ProtocolError::Shape(format!("head {h} outside {}x{}", caps.n_layers, caps.n_heads)));
            }
        }
        let prompt = CharTokenizer::encode(&req.prompt)?;
        if prompt.is_empty() || prompt.len() > caps.max_seq_len {
            return Err(ProtocolError::Shape(format!("prompt of {} tokens", prompt.len())));
        }
        let ablate: HashSet<HeadId> = req.ablate.iter().copied().collect();
        let mut state = self.prefill(&prompt, ablate);
        let mut text = String::new();
        let mut logprobs = Vec::new();
        while logprobs.len() < req.max_new_tokens && state.len() < caps.max_seq_len {
            let logits = state.logits();
            // argmax, lowest id on ties
            let next = logits
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                .0 as u32;
            logprobs.push(log_softmax(logits.view())[next as usize]);
            text.push(CharTokenizer::char_of(next));
            if let Some(cut) = req.stop.iter().filter_map(|s| text.find(s.as_str())).min() {
                text.truncate(cut);
                logprobs.truncate(cut);
                break;
            }
            if logprobs.len() < req.max_new_tokens {
                self.step(&mut state, next);
            }
        }
        Ok(GenerateResult {
            protocol_version: PROTOCOL_VERSION.to_string(),
            request_id: req.request_id.clone(),
            tokens: text.chars().map(String::from).collect(),
            offsets: (0..text.len()).map(|i| [i, i + 1]).collect(),
            text,
            logprobs,
        })
    }
}
