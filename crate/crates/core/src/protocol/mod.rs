// SPDX-License-Identifier: MIT OR Apache-2.0

//! The model contract: capture, patch and ablate per-head residual
//! contributions, read log-probabilities, and generate greedily.
//!
//! The same [`ModelBackend`] trait is implemented in-process by the toy model
//! and over HTTP+JSON by [`HttpBackend`]. Activations travel as base64
//! little-endian `f32` arrays. A head's contribution vector has the model's
//! hidden width (it is already projected through the output matrix).

mod align;
mod http;

use std::fmt;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use align::{align_pair, map_spans, SpanMapping};
pub use http::{serve, HttpBackend, ServerHandle};

pub const PROTOCOL_VERSION: &str = "1.0";

/// `(layer, head)` coordinate of a query head.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        HeadId { layer, head }
    }
}

impl fmt::Display for HeadId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}

/// `f32` values encoded on the wire as base64 of their little-endian bytes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct F32Array(pub Vec<f32>);

impl F32Array {
    pub fn encode(&self) -> String {
        let mut bytes = Vec::with_capacity(self.0.len() * 4);
        for v in &self.0 {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        STANDARD.encode(bytes)
    }

    pub fn decode(s: &str) -> Result<Self, ProtocolError> {
        let bytes = STANDARD.decode(s).map_err(|e| ProtocolError::Shape(format!("bad base64: {e}")))?;
        if bytes.len() % 4 != 0 {
            return Err(ProtocolError::Shape(format!("{} bytes is not a whole number of f32", bytes.len())));
        }
        Ok(F32Array(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()))
    }
}

impl Serialize for F32Array {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.encode())
    }
}

impl<'de> Deserialize<'de> for F32Array {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        F32Array::decode(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capabilities {
    pub protocol_version: String,
    pub model_id: String,
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden_width: usize,
    pub head_width: usize,
    pub max_seq_len: usize,
    pub tokenizer_fingerprint: String,
    /// Absolute tolerance the backend promises for self-patch round trips.
    pub float_tolerance: f64,
}

impl Capabilities {
    pub fn total_heads(&self) -> usize {
        self.n_layers * self.n_heads
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenizeRequest {
    pub protocol_version: String,
    pub text: String,
}

/// Token ids with the byte range each token covers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizeResult {
    pub tokens: Vec<u32>,
    pub offsets: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureSpec {
    pub layer: usize,
    pub head: usize,
    pub positions: Vec<usize>,
}

/// Replacement contributions, `positions.len() * hidden_width` values,
/// position-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub layer: usize,
    pub head: usize,
    pub positions: Vec<usize>,
    pub values: F32Array,
}

/// Ask for `log p(candidate | tokens[..=position])` for each candidate; a
/// candidate is scored by its first token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogprobQuery {
    pub position: usize,
    pub candidates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardRequest {
    pub protocol_version: String,
    #[serde(default)]
    pub request_id: Option<String>,
    pub prompt: String,
    #[serde(default)]
    pub captures: Vec<CaptureSpec>,
    #[serde(default)]
    pub patches: Vec<PatchSpec>,
    #[serde(default)]
    pub ablate: Vec<HeadId>,
    #[serde(default)]
    pub return_logprobs_at: Vec<LogprobQuery>,
    /// Also return the teacher-forced logprob of every prompt token.
    #[serde(default)]
    pub echo: bool,
}

impl ForwardRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        ForwardRequest {
            protocol_version: PROTOCOL_VERSION.to_string(),
            request_id: None,
            prompt: prompt.into(),
            captures: Vec::new(),
            patches: Vec::new(),
            ablate: Vec::new(),
            return_logprobs_at: Vec::new(),
            echo: false,
        }
    }

    pub fn logprobs_at(mut self, position: usize, candidates: &[&str]) -> Self {
        self.return_logprobs_at.push(LogprobQuery { position, candidates: candidates.iter().map(|s| s.to_string()).collect() });
        self
    }

    pub fn capture(mut self, head: HeadId, positions: Vec<usize>) -> Self {
        self.captures.push(CaptureSpec { layer: head.layer, head: head.head, positions });
        self
    }

    pub fn patch(mut self, head: HeadId, positions: Vec<usize>, values: Vec<f32>) -> Self {
        self.patches.push(PatchSpec { layer: head.layer, head: head.head, positions, values: F32Array(values) });
        self
    }

    pub fn ablate(mut self, heads: impl IntoIterator<Item = HeadId>) -> Self {
        self.ablate.extend(heads);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Captured {
    pub layer: usize,
    pub head: usize,
    pub positions: Vec<usize>,
    pub values: F32Array,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogprobResult {
    pub position: usize,
    pub candidates: Vec<String>,
    pub logprobs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardResult {
    pub protocol_version: String,
    #[serde(default)]
    pub request_id: Option<String>,
    pub n_tokens: usize,
    pub captures: Vec<Captured>,
    pub logprobs: Vec<LogprobResult>,
    /// Entry `t` is `log p(token t | tokens < t)`; `None` for the first token.
    #[serde(default)]
    pub echo_logprobs: Option<Vec<Option<f64>>>,
}

impl ForwardResult {
    /// Logprob of `candidate` at `position`, if it was requested.
    pub fn logprob(&self, position: usize, candidate: &str) -> Option<f64> {
        let r = self.logprobs.iter().find(|r| r.position == position)?;
        let i = r.candidates.iter().position(|c| c == candidate)?;
        r.logprobs.get(i).copied()
    }

    pub fn captured(&self, head: HeadId) -> Option<&Captured> {
        self.captures.iter().find(|c| c.layer == head.layer && c.head == head.head)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub protocol_version: String,
    #[serde(default)]
    pub request_id: Option<String>,
    pub prompt: String,
    pub max_new_tokens: usize,
    #[serde(default)]
    pub ablate: Vec<HeadId>,
    /// Generation halts once the continuation contains any of these.
    #[serde(default)]
    pub stop: Vec<String>,
}

impl GenerateRequest {
    pub fn new(prompt: impl Into<String>, max_new_tokens: usize) -> Self {
        GenerateRequest {
            protocol_version: PROTOCOL_VERSION.to_string(),
            request_id: None,
            prompt: prompt.into(),
            max_new_tokens,
            ablate: Vec::new(),
            stop: Vec::new(),
        }
    }
}

/// Greedy continuation with per-token logprobs and byte offsets into `text`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateResult {
    pub protocol_version: String,
    #[serde(default)]
    pub request_id: Option<String>,
    pub text: String,
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
    pub offsets: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ProtocolError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("head {0} is both patched and ablated")]
    Disjointness(HeadId),
    #[error("unknown character {ch:?} at byte {offset}")]
    UnknownChar { ch: char, offset: usize },
    #[error("protocol version {0:?} is not supported")]
    Version(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend error: {0}")]
    Backend(String),
}

impl ProtocolError {
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolError::Shape(_) => "shape",
            ProtocolError::Disjointness(_) => "disjointness",
            ProtocolError::UnknownChar { .. } => "unknown_char",
            ProtocolError::Version(_) => "version",
            ProtocolError::Alignment(_) => "alignment",
            ProtocolError::Transport(_) => "transport",
            ProtocolError::Backend(_) => "backend",
        }
    }
}

/// JSON error body: `{"error": {"kind": ..., "message": ...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<HeadId>,
    /// An unknown character and its byte offset.
    #[serde(default, rename = "char", skip_serializing_if = "Option::is_none")]
    pub ch: Option<char>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

impl From<&ProtocolError> for ErrorBody {
    fn from(e: &ProtocolError) -> Self {
        let head = match e {
            ProtocolError::Disjointness(h) => Some(*h),
            _ => None,
        };
        let (ch, offset) = match e {
            ProtocolError::UnknownChar { ch, offset } => (Some(*ch), Some(*offset)),
            _ => (None, None),
        };
        ErrorBody { error: ErrorDetail { kind: e.kind().to_string(), message: e.to_string(), head, ch, offset } }
    }
}

impl From<ErrorBody> for ProtocolError {
    fn from(b: ErrorBody) -> Self {
        let m = b.error.message;
        match b.error.kind.as_str() {
            "shape" => ProtocolError::Shape(m),
            "disjointness" => match b.error.head {
                Some(h) => ProtocolError::Disjointness(h),
                None => ProtocolError::Backend(m),
            },
            "unknown_char" => match (b.error.ch, b.error.offset) {
                (Some(ch), Some(offset)) => ProtocolError::UnknownChar { ch, offset },
                _ => ProtocolError::Backend(m),
            },
            "version" => ProtocolError::Version(m),
            "alignment" => ProtocolError::Alignment(m),
            "transport" => ProtocolError::Transport(m),
            _ => ProtocolError::Backend(m),
        }
    }
}

/// Anything that can run the contract: the toy model in-process, or a
/// remote gateway.
pub trait ModelBackend: Send + Sync {
    fn capabilities(&self) -> Result<Capabilities, ProtocolError>;
    fn tokenize(&self, text: &str) -> Result<TokenizeResult, ProtocolError>;
    fn forward(&self, req: &ForwardRequest) -> Result<ForwardResult, ProtocolError>;
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResult, ProtocolError>;
}

impl<T: ModelBackend + ?Sized> ModelBackend for std::sync::Arc<T> {
    fn capabilities(&self) -> Result<Capabilities, ProtocolError> {
        (**self).capabilities()
    }
    fn tokenize(&self, text: &str) -> Result<TokenizeResult, ProtocolError> {
        (**self).tokenize(text)
    }
    fn forward(&self, req: &ForwardRequest) -> Result<ForwardResult, ProtocolError> {
        (**self).forward(req)
    }
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResult, ProtocolError> {
        (**self).generate(req)
    }
}

/// Opens `toy://` (optionally `toy://?layers=2&heads=4&head_width=8&seed=0`)
/// in-process, or an `http://` gateway.
pub fn open_endpoint(endpoint: &str) -> Result<std::sync::Arc<dyn ModelBackend>, ProtocolError> {
    if let Some(rest) = endpoint.strip_prefix("toy://") {
        let mut cfg = crate::toymodel::ToyConfig::default();
        for kv in rest.trim_start_matches('?').split('&').filter(|s| !s.is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| ProtocolError::Transport(format!("bad toy option {kv:?}")))?;
            let n: u64 = v.parse().map_err(|_| ProtocolError::Transport(format!("bad toy option {kv:?}")))?;
            match k {
                "layers" => cfg.n_layers = n as usize,
                "heads" => cfg.n_heads = n as usize,
                "head_width" => cfg.head_width = n as usize,
                "max_seq_len" => cfg.max_seq_len = n as usize,
                "seed" => cfg.seed = n,
                _ => return Err(ProtocolError::Transport(format!("unknown toy option {k:?}"))),
            }
        }
        if cfg.n_layers == 0 || cfg.n_heads == 0 || cfg.head_width == 0 || cfg.max_seq_len == 0 {
            return Err(ProtocolError::Transport("toy shapes must be nonzero".into()));
        }
        return Ok(std::sync::Arc::new(crate::toymodel::ToyModel::new(cfg)));
    }
    if endpoint.starts_with("http://") || endpoint.starts_with("https://") {
        return Ok(std::sync::Arc::new(HttpBackend::new(endpoint)));
    }
    Err(ProtocolError::Transport(format!("unsupported endpoint {endpoint:?}")))
}

pub fn check_version(v: &str) -> Result<(), ProtocolError> {
    let major = |s: &str| s.split('.').next().map(str::to_owned);
    if major(v) == major(PROTOCOL_VERSION) {
        Ok(())
    } else {
        Err(ProtocolError::Version(v.to_string()))
    }
}

fn check_head(caps: &Capabilities, layer: usize, head: usize) -> Result<(), ProtocolError> {
    if layer >= caps.n_layers || head >= caps.n_heads {
        return Err(ProtocolError::Shape(format!(
            "head ({layer}, {head}) outside {}x{}",
            caps.n_layers, caps.n_heads
        )));
    }
    Ok(())
}

fn check_positions(positions: &[usize], n_tokens: usize) -> Result<(), ProtocolError> {
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ProtocolError::Shape("positions must be strictly increasing".into()));
    }
    if let Some(&p) = positions.last() {
        if p >= n_tokens {
            return Err(ProtocolError::Shape(format!("position {p} outside {n_tokens} tokens")));
        }
    }
    Ok(())
}

/// Shared request validation for backends.
pub fn validate_forward(req: &ForwardRequest, caps: &Capabilities, n_tokens: usize) -> Result<(), ProtocolError> {
    check_version(&req.protocol_version)?;
    if n_tokens > caps.max_seq_len {
        return Err(ProtocolError::Shape(format!("{n_tokens} tokens exceeds max_seq_len {}", caps.max_seq_len)));
    }
    for c in &req.captures {
        check_head(caps, c.layer, c.head)?;
        check_positions(&c.positions, n_tokens)?;
    }
    for p in &req.patches {
        check_head(caps, p.layer, p.head)?;
        check_positions(&p.positions, n_tokens)?;
        let want = p.positions.len() * caps.hidden_width;
        if p.values.0.len() != want {
            return Err(ProtocolError::Shape(format!(
                "patch for ({}, {}) has {} values, expected {want}",
                p.layer,
                p.head,
                p.values.0.len()
            )));
        }
        if req.ablate.contains(&HeadId::new(p.layer, p.head)) {
            return Err(ProtocolError::Disjointness(HeadId::new(p.layer, p.head)));
        }
    }
    for h in &req.ablate {
        check_head(caps, h.layer, h.head)?;
    }
    for q in &req.return_logprobs_at {
        if q.position >= n_tokens {
            return Err(ProtocolError::Shape(format!("logprob position {} outside {n_tokens} tokens", q.position)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_array_round_trips_bit_exact() {
        let v = F32Array(vec![0.0, -0.0, 1.5, f32::MIN_POSITIVE, 3.4e38, -1e-30]);
        let back = F32Array::decode(&v.encode()).unwrap();
        let bits = |a: &F32Array| a.0.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&v), bits(&back));
        // 1.0f32 little-endian is 00 00 80 3f
        assert_eq!(F32Array(vec![1.0]).encode(), "AACAPw==");
        assert!(F32Array::decode("AACA").is_err());
    }

    #[test]
    fn error_body_round_trip() {
        let e = ProtocolError::Disjointness(HeadId::new(1, 2));
        let body = ErrorBody::from(&e);
        let json = serde_json::to_string(&body).unwrap();
        let back: ErrorBody = serde_json::from_str(&json).unwrap();
        assert_eq!(ProtocolError::from(back), e);
    }

    #[test]
    fn endpoints() {
        let caps = open_endpoint("toy://?layers=2&seed=4&max_seq_len=64").unwrap().capabilities().unwrap();
        assert_eq!((caps.n_layers, caps.n_heads, caps.max_seq_len), (2, 4, 64));
        assert!(open_endpoint("toy://?layers=0").is_err());
        assert!(open_endpoint("toy://?depth=2").is_err());
        assert!(open_endpoint("grpc://x").is_err());
    }

    #[test]
    fn version_major_must_match() {
        assert!(check_version("1.3").is_ok());
        assert!(check_version("2.0").is_err());
    }
}
