// SPDX-License-Identifier: MIT OR Apache-2.0

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{
    check_version, Capabilities, ErrorBody, ForwardRequest, ForwardResult, GenerateRequest, GenerateResult,
    ModelBackend, ProtocolError, TokenizeRequest, TokenizeResult, PROTOCOL_VERSION,
};

/// Client for a backend served over HTTP+JSON.
pub struct HttpBackend {
    base: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(600)).build();
        HttpBackend { base: base_url.trim_end_matches('/').to_string(), agent }
    }

    fn decode<T: DeserializeOwned>(res: Result<ureq::Response, ureq::Error>) -> Result<T, ProtocolError> {
        match res {
            Ok(r) => r.into_json().map_err(|e| ProtocolError::Transport(e.to_string())),
            Err(ureq::Error::Status(code, r)) => match r.into_json::<ErrorBody>() {
                Ok(body) => Err(body.into()),
                Err(_) => Err(ProtocolError::Transport(format!("HTTP {code}"))),
            },
            Err(e) => Err(ProtocolError::Transport(e.to_string())),
        }
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ProtocolError> {
        let json = serde_json::to_string(body).map_err(|e| ProtocolError::Transport(e.to_string()))?;
        let res = self.agent.post(&format!("{}{path}", self.base)).set("Content-Type", "application/json").send_string(&json);
        Self::decode(res)
    }
}

impl ModelBackend for HttpBackend {
    fn capabilities(&self) -> Result<Capabilities, ProtocolError> {
        Self::decode(self.agent.get(&format!("{}/capabilities", self.base)).call())
    }

    fn tokenize(&self, text: &str) -> Result<TokenizeResult, ProtocolError> {
        self.post("/tokenize", &TokenizeRequest { protocol_version: PROTOCOL_VERSION.into(), text: text.into() })
    }

    fn forward(&self, req: &ForwardRequest) -> Result<ForwardResult, ProtocolError> {
        self.post("/forward", req)
    }

    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResult, ProtocolError> {
        self.post("/generate", req)
    }
}

/// A running server; stops when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    server: Arc<tiny_http::Server>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the server thread exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Serves `backend` on `addr` (e.g. `127.0.0.1:0` for an ephemeral port).
/// Requests are handled one at a time.
pub fn serve(backend: Arc<dyn ModelBackend>, addr: &str) -> Result<ServerHandle, ProtocolError> {
    let server = tiny_http::Server::http(addr).map_err(|e| ProtocolError::Transport(e.to_string()))?;
    let bound = server.server_addr().to_ip().ok_or_else(|| ProtocolError::Transport("not an IP listener".into()))?;
    let server = Arc::new(server);
    let s = Arc::clone(&server);
    let thread = std::thread::spawn(move || {
        for mut req in s.incoming_requests() {
            let mut body = String::new();
            let (code, json) = match req.as_reader().read_to_string(&mut body) {
                Ok(_) => route(&*backend, req.method(), req.url(), &body),
                Err(e) => error_response(400, &ProtocolError::Transport(e.to_string())),
            };
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
            let _ = req.respond(tiny_http::Response::from_string(json).with_status_code(code).with_header(header));
        }
    });
    Ok(ServerHandle { addr: bound, server, thread: Some(thread) })
}

fn error_response(code: u16, e: &ProtocolError) -> (u16, String) {
    (code, serde_json::to_string(&ErrorBody::from(e)).unwrap_or_default())
}

fn status_for(e: &ProtocolError) -> u16 {
    match e {
        ProtocolError::Transport(_) | ProtocolError::Backend(_) => 500,
        _ => 400,
    }
}

fn reply<T: Serialize>(r: Result<T, ProtocolError>) -> (u16, String) {
    match r {
        Ok(v) => (200, serde_json::to_string(&v).unwrap_or_default()),
        Err(e) => error_response(status_for(&e), &e),
    }
}

fn parse<T: DeserializeOwned>(body: &str) -> Result<T, ProtocolError> {
    serde_json::from_str(body).map_err(|e| ProtocolError::Shape(format!("bad request body: {e}")))
}

fn route(backend: &dyn ModelBackend, method: &tiny_http::Method, url: &str, body: &str) -> (u16, String) {
    use tiny_http::Method::{Get, Post};
    match (method, url) {
        (Get, "/capabilities") => reply(backend.capabilities()),
        (Post, "/tokenize") => reply(parse::<TokenizeRequest>(body).and_then(|r| {
            check_version(&r.protocol_version)?;
            backend.tokenize(&r.text)
        })),
        (Post, "/forward") => reply(parse::<ForwardRequest>(body).and_then(|r| backend.forward(&r))),
        (Post, "/generate") => reply(parse::<GenerateRequest>(body).and_then(|r| backend.generate(&r))),
        _ => error_response(404, &ProtocolError::Transport(format!("no route {method} {url}"))),
    }
}
