//! HTTP/JSON wire protocol for remote backends, client and server side.
//!
//! ```text
//! POST /v1/encode  {"text": s}   -> {"ids": [..]}
//! POST /v1/decode  {"ids": [..]} -> {"text": s}
//! POST /v1/logits  {"ids": [..]} -> {"logits": [..]}
//! GET  /v1/vocab                 -> {"size": K, "newline_id": n}
//! ```

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{LanguageModel, LmError, TokenId};

#[derive(Debug, Serialize, Deserialize)]
struct VocabInfo {
    size: usize,
    newline_id: TokenId,
}

#[derive(Debug, Serialize, Deserialize)]
struct TextBody {
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct IdsBody {
    ids: Vec<TokenId>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LogitsBody {
    logits: Vec<f64>,
}

/// Client for a backend speaking the protocol above.
pub struct RemoteModel {
    base: String,
    agent: ureq::Agent,
    size: usize,
    newline_id: TokenId,
}

fn transport(e: ureq::Error) -> LmError {
    match e {
        ureq::Error::Status(code, resp) => LmError::Protocol(format!(
            "{} returned status {code}",
            resp.get_url()
        )),
        ureq::Error::Transport(t) => LmError::BackendUnavailable(t.to_string()),
    }
}

impl RemoteModel {
    /// Connect to `base_url` and fetch the vocabulary description.
    pub fn connect(base_url: &str) -> Result<Self, LmError> {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(5))
            .timeout(Duration::from_secs(60))
            .build();
        let base = base_url.trim_end_matches('/').to_string();
        let info: VocabInfo = agent
            .get(&format!("{base}/v1/vocab"))
            .call()
            .map_err(transport)?
            .into_json()
            .map_err(|e| LmError::Protocol(e.to_string()))?;
        Ok(Self {
            base,
            agent,
            size: info.size,
            newline_id: info.newline_id,
        })
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: serde_json::Value) -> Result<T, LmError> {
        self.agent
            .post(&format!("{}{path}", self.base))
            .send_json(body)
            .map_err(transport)?
            .into_json()
            .map_err(|e| LmError::Protocol(e.to_string()))
    }
}

impl LanguageModel for RemoteModel {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>, LmError> {
        Ok(self.post::<IdsBody>("/v1/encode", json!({ "text": text }))?.ids)
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String, LmError> {
        Ok(self.post::<TextBody>("/v1/decode", json!({ "ids": ids }))?.text)
    }

    fn vocab_size(&self) -> usize {
        self.size
    }

    fn newline_id(&self) -> TokenId {
        self.newline_id
    }

    fn next_logits(&self, ids: &[TokenId]) -> Result<Vec<f64>, LmError> {
        let logits = self.post::<LogitsBody>("/v1/logits", json!({ "ids": ids }))?.logits;
        if logits.len() != self.size {
            return Err(LmError::Protocol(format!(
                "expected {} logits, got {}",
                self.size,
                logits.len()
            )));
        }
        Ok(logits)
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

    /// Block until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn handle(model: &dyn LanguageModel, method: &tiny_http::Method, url: &str, body: &str) -> (u16, String) {
    fn parse<T: DeserializeOwned>(body: &str) -> Result<T, (u16, String)> {
        serde_json::from_str(body).map_err(|e| (400, json!({ "error": e.to_string() }).to_string()))
    }
    fn lm(r: Result<String, LmError>) -> (u16, String) {
        match r {
            Ok(s) => (200, s),
            Err(e) => (400, json!({ "error": e.to_string() }).to_string()),
        }
    }
    use tiny_http::Method::{Get, Post};
    let result = match (method, url) {
        (Get, "/v1/vocab") => Ok((
            200,
            json!({ "size": model.vocab_size(), "newline_id": model.newline_id() }).to_string(),
        )),
        (Post, "/v1/encode") => parse::<TextBody>(body)
            .map(|b| lm(model.encode(&b.text).map(|ids| json!({ "ids": ids }).to_string()))),
        (Post, "/v1/decode") => parse::<IdsBody>(body)
            .map(|b| lm(model.decode(&b.ids).map(|text| json!({ "text": text }).to_string()))),
        (Post, "/v1/logits") => parse::<IdsBody>(body).map(|b| {
            lm(model
                .next_logits(&b.ids)
                .map(|l| json!({ "logits": l }).to_string()))
        }),
        _ => Err((404, json!({ "error": "not found" }).to_string())),
    };
    result.unwrap_or_else(|e| e)
}

/// Serve `model` on `addr` (use port 0 for an ephemeral port) from a
/// background thread.
pub fn serve(model: Arc<dyn LanguageModel>, addr: &str) -> std::io::Result<ServerHandle> {
    let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
    let local = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
    let server = Arc::new(server);
    let worker = Arc::clone(&server);
    let thread = std::thread::spawn(move || {
        for mut req in worker.incoming_requests() {
            let mut body = String::new();
            let (status, text) = match req.as_reader().read_to_string(&mut body) {
                Ok(_) => handle(model.as_ref(), req.method(), req.url(), &body),
                Err(e) => (400, json!({ "error": e.to_string() }).to_string()),
            };
            let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
                .expect("static header");
            let resp = tiny_http::Response::from_string(text)
                .with_status_code(status)
                .with_header(header);
            let _ = req.respond(resp);
        }
    });
    Ok(ServerHandle {
        addr: local,
        server,
        thread: Some(thread),
    })
}
