//! Client for the encoder/generator bridge.
//!
//! The bridge is an external process speaking newline-delimited JSON on its
//! stdin/stdout: one request line in, one response line out, strictly in
//! order. See `docs/bridge.md` for the field-by-field protocol.

mod build;
pub mod stub;
mod transport;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::embedstore::{normalize, Embedding};
use crate::error::{Error, Result};

pub use build::{
    build_class_protos, cache_root, embed_queries, BuildOptions, BuildOutput, CacheIndex,
    CacheIndexEntry, ClassPrompts, CACHE_ENV,
};
pub use transport::{
    write_exchanges, Exchange, FnTransport, ProcessTransport, RecordingTransport, ReplayTransport,
    Transport,
};

pub const DEFAULT_STEPS: u32 = 50;
pub const DEFAULT_GUIDANCE: f64 = 15.0;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateParams {
    pub steps: u32,
    pub guidance: f64,
    pub seed: u64,
}

impl Default for GenerateParams {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            guidance: DEFAULT_GUIDANCE,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum BridgeRequest {
    EmbedText {
        texts: Vec<String>,
    },
    EmbedImage {
        paths: Vec<String>,
    },
    Generate {
        prompt: String,
        count: u32,
        steps: u32,
        guidance: f64,
        seed: u64,
    },
}

impl BridgeRequest {
    pub fn generate(prompt: impl Into<String>, count: u32, params: GenerateParams) -> Self {
        BridgeRequest::Generate {
            prompt: prompt.into(),
            count,
            steps: params.steps,
            guidance: params.guidance,
            seed: params.seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ProtocolError(m.to_string()));
        match self {
            BridgeRequest::EmbedText { texts } if texts.is_empty() => bad("embed_text needs at least one text"),
            BridgeRequest::EmbedImage { paths } if paths.is_empty() => bad("embed_image needs at least one path"),
            BridgeRequest::Generate { count: 0, .. } => bad("generate needs count >= 1"),
            BridgeRequest::Generate { guidance, .. } if !guidance.is_finite() => bad("guidance must be finite"),
            _ => Ok(()),
        }
    }

    /// Stable JSON used for the request line body and as the cache key.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("requests always serialize")
    }
}

/// Wire form of a request: `{"id": n, "op": ..., ...}`.
#[derive(Serialize)]
struct Envelope<'a> {
    id: u64,
    #[serde(flatten)]
    request: &'a BridgeRequest,
}

/// Wire form of a response line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Free-form server metadata (encoder id, image size, scheduler).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub info: Option<BTreeMap<String, serde_json::Value>>,
}

/// A validated response payload. Embeddings are already unit-normalized.
#[derive(Debug, Clone, PartialEq)]
pub enum BridgeReply {
    Embeddings(Vec<Embedding>),
    Paths(Vec<String>),
}

impl BridgeReply {
    pub fn into_embeddings(self) -> Result<Vec<Embedding>> {
        match self {
            BridgeReply::Embeddings(e) => Ok(e),
            BridgeReply::Paths(_) => Err(Error::ProtocolError("expected embeddings, got paths".into())),
        }
    }

    pub fn into_paths(self) -> Result<Vec<String>> {
        match self {
            BridgeReply::Paths(p) => Ok(p),
            BridgeReply::Embeddings(_) => Err(Error::ProtocolError("expected paths, got embeddings".into())),
        }
    }
}

/// Parses and validates one response line against the request that produced it.
pub fn parse_response(
    line: &str,
    request: &BridgeRequest,
    expected_id: Option<u64>,
    expected_dim: Option<usize>,
) -> Result<(BridgeReply, Option<BTreeMap<String, serde_json::Value>>)> {
    let resp: BridgeResponse = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::ProtocolError(format!("malformed response line: {e}")))?;
    if let (Some(want), Some(got)) = (expected_id, resp.id) {
        if want != got {
            return Err(Error::ProtocolError(format!(
                "response id {got} does not match request id {want}"
            )));
        }
    }
    if !resp.ok {
        return Err(Error::RemoteError(
            resp.error.unwrap_or_else(|| "unspecified error".into()),
        ));
    }
    let reply = match (resp.embeddings, resp.paths) {
        (Some(vectors), None) => {
            let wanted = match request {
                BridgeRequest::EmbedText { texts } => texts.len(),
                BridgeRequest::EmbedImage { paths } => paths.len(),
                BridgeRequest::Generate { .. } => {
                    return Err(Error::ProtocolError("generate answered with embeddings".into()))
                }
            };
            if vectors.len() != wanted {
                return Err(Error::ProtocolError(format!(
                    "expected {wanted} embeddings, got {}",
                    vectors.len()
                )));
            }
            let dim = expected_dim.unwrap_or_else(|| vectors[0].len());
            let embeddings = vectors
                .iter()
                .map(|v| {
                    if v.len() != dim {
                        return Err(Error::ProtocolError(format!(
                            "embedding of dim {} where {dim} expected",
                            v.len()
                        )));
                    }
                    normalize(v).map_err(|e| Error::ProtocolError(format!("bad embedding: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            BridgeReply::Embeddings(embeddings)
        }
        (None, Some(paths)) => {
            let BridgeRequest::Generate { count, .. } = request else {
                return Err(Error::ProtocolError("embedding request answered with paths".into()));
            };
            if paths.len() != *count as usize {
                return Err(Error::ProtocolError(format!(
                    "expected {count} paths, got {}",
                    paths.len()
                )));
            }
            BridgeReply::Paths(paths)
        }
        _ => {
            return Err(Error::ProtocolError(
                "ok response must carry exactly one of embeddings or paths".into(),
            ))
        }
    };
    Ok((reply, resp.info))
}

struct ClientState {
    transport: Box<dyn Transport>,
    next_id: u64,
    memo: HashMap<String, BridgeReply>,
    last_info: Option<BTreeMap<String, serde_json::Value>>,
}

/// Serializes requests over one transport and memoizes identical requests.
pub struct BridgeClient {
    state: Mutex<ClientState>,
    expected_dim: Option<usize>,
    calls: AtomicUsize,
}

impl BridgeClient {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Self {
            state: Mutex::new(ClientState {
                transport,
                next_id: 0,
                memo: HashMap::new(),
                last_info: None,
            }),
            expected_dim: None,
            calls: AtomicUsize::new(0),
        }
    }

    /// Rejects embeddings whose dimension differs from `dim`.
    pub fn with_expected_dim(mut self, dim: usize) -> Self {
        self.expected_dim = Some(dim);
        self
    }

    /// Number of requests that actually reached the transport.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn last_info(&self) -> Option<BTreeMap<String, serde_json::Value>> {
        self.state.lock().expect("bridge state poisoned").last_info.clone()
    }

    pub fn request(&self, req: &BridgeRequest) -> Result<BridgeReply> {
        req.validate()?;
        let key = req.canonical();
        let mut state = self.state.lock().expect("bridge state poisoned");
        if let Some(hit) = state.memo.get(&key) {
            return Ok(hit.clone());
        }
        let id = state.next_id;
        state.next_id += 1;
        let line = serde_json::to_string(&Envelope { id, request: req })?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let response = state.transport.exchange(&line)?;
        let (reply, info) = parse_response(&response, req, Some(id), self.expected_dim)?;
        if info.is_some() {
            state.last_info = info;
        }
        state.memo.insert(key, reply.clone());
        Ok(reply)
    }

    pub fn embed_text(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        self.request(&BridgeRequest::EmbedText {
            texts: texts.to_vec(),
        })?
        .into_embeddings()
    }

    pub fn embed_image(&self, paths: &[String]) -> Result<Vec<Embedding>> {
        self.request(&BridgeRequest::EmbedImage {
            paths: paths.to_vec(),
        })?
        .into_embeddings()
    }

    pub fn generate(&self, prompt: &str, count: u32, params: GenerateParams) -> Result<Vec<String>> {
        self.request(&BridgeRequest::generate(prompt, count, params))?
            .into_paths()
    }
}
