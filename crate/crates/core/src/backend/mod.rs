//! Model backend protocol: three JSON-over-HTTP capabilities (generate,
//! embed, attention) with live, record, and replay transports behind one
//! client, so validation behaves identically in every mode.

pub mod fixture;
mod transports;

pub use fixture::FixtureTransport;
pub use transports::{Cassette, CassetteEntry, HttpTransport, RecordTransport, ReplayTransport};

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attention::{AttentionError, AttentionTensor};
use crate::corpus::Span;

/// Environment variable overriding the backend endpoint.
pub const ENV_BACKEND_URL: &str = "CAP_BACKEND_URL";
/// Environment variable overriding the backend mode.
pub const ENV_BACKEND_MODE: &str = "CAP_BACKEND_MODE";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend request timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("prompt is {got} chars, backend limit is {limit}")]
    ContextLengthExceeded { limit: usize, got: usize },
    #[error("no recorded response for {route} request {hash}")]
    ReplayMiss { route: String, hash: String },
    #[error(transparent)]
    Tensor(#[from] AttentionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Counter of outbound network attempts, process-wide. Replay transports
/// never touch it; tests assert hermeticity through it.
static NETWORK_OPS: AtomicU64 = AtomicU64::new(0);

pub fn network_ops() -> u64 {
    NETWORK_OPS.load(Ordering::SeqCst)
}

pub(crate) fn count_network_op() {
    NETWORK_OPS.fetch_add(1, Ordering::SeqCst);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    Record,
    Replay,
}

impl std::str::FromStr for BackendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(BackendMode::Live),
            "record" => Ok(BackendMode::Record),
            "replay" => Ok(BackendMode::Replay),
            other => Err(format!("unknown backend mode {other:?}")),
        }
    }
}

impl std::fmt::Display for BackendMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendMode::Live => "live",
            BackendMode::Record => "record",
            BackendMode::Replay => "replay",
        })
    }
}

/// Connection settings. One endpoint serves all three routes unless a
/// capability-specific endpoint overrides it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_endpoint: Option<String>,
    pub model: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub mode: BackendMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_prompt_chars: Option<usize>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "http://127.0.0.1:8080".into(),
            embed_endpoint: None,
            attention_endpoint: None,
            model: "default".into(),
            timeout_ms: 30_000,
            max_retries: 2,
            retry_backoff_ms: 250,
            mode: BackendMode::Live,
            max_prompt_chars: None,
        }
    }
}

impl BackendConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn retry_backoff(&self) -> Duration {
        Duration::from_millis(self.retry_backoff_ms)
    }

    /// Applies `CAP_BACKEND_URL` and `CAP_BACKEND_MODE` when set and non-empty.
    pub fn apply_env_overrides(&mut self) -> Result<(), BackendError> {
        if let Ok(url) = std::env::var(ENV_BACKEND_URL) {
            if !url.is_empty() {
                self.endpoint = url;
            }
        }
        if let Ok(mode) = std::env::var(ENV_BACKEND_MODE) {
            if !mode.is_empty() {
                self.mode = mode
                    .parse()
                    .map_err(|e: String| BackendError::Protocol(format!("{ENV_BACKEND_MODE}: {e}")))?;
            }
        }
        Ok(())
    }
}

/// One text generation call. Temperature 0 means greedy decoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl GenerationRequest {
    pub fn greedy(prompt: impl Into<String>, max_new_tokens: u32) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            max_new_tokens,
            temperature: 0.0,
            stop: None,
        }
    }
}

/// Truncates at the earliest occurrence of any stop sequence.
pub fn strip_stop(text: &str, stop: Option<&[String]>) -> String {
    let Some(stops) = stop else {
        return text.to_string();
    };
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

/// One token of an attention pass. Special tokens carry an empty span.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TokenSpan {
    pub text: String,
    pub span: Span,
}

/// Validated attention output: tokens whose non-empty spans slice the input
/// in ascending, non-overlapping order, plus the per-head tensor.
#[derive(Clone, Debug, Serialize)]
pub struct AttentionResponse {
    pub tokens: Vec<TokenSpan>,
    pub tensor: AttentionTensor,
}

impl AttentionResponse {
    pub fn from_wire(input: &str, wire: AttentionRespWire) -> Result<Self, BackendError> {
        let t = wire.tokens.len();
        let mut tokens = Vec::with_capacity(t);
        let mut prev_end = 0usize;
        for tok in &wire.tokens {
            if tok.start > tok.end || tok.end > input.len() {
                return Err(BackendError::Protocol(format!(
                    "token span {}..{} out of range for {} bytes",
                    tok.start,
                    tok.end,
                    input.len()
                )));
            }
            if tok.start < tok.end {
                if tok.start < prev_end {
                    return Err(BackendError::Protocol(format!(
                        "token span {}..{} overlaps an earlier token",
                        tok.start, tok.end
                    )));
                }
                let Some(slice) = input.get(tok.start..tok.end) else {
                    return Err(BackendError::Protocol(format!(
                        "token span {}..{} is not on a character boundary",
                        tok.start, tok.end
                    )));
                };
                if slice != tok.text {
                    return Err(BackendError::Protocol(format!(
                        "token text {:?} does not match input slice {:?}",
                        tok.text, slice
                    )));
                }
                prev_end = tok.end;
            }
            tokens.push(TokenSpan {
                text: tok.text.clone(),
                span: Span::new(tok.start, tok.end),
            });
        }
        let mut flat = Vec::with_capacity(wire.num_heads * t * t);
        if wire.weights.len() != wire.num_heads {
            return Err(BackendError::Protocol(format!(
                "expected {} heads of weights, got {}",
                wire.num_heads,
                wire.weights.len()
            )));
        }
        for head in &wire.weights {
            if head.len() != t {
                return Err(BackendError::Protocol(format!(
                    "expected {t} rows per head, got {}",
                    head.len()
                )));
            }
            for row in head {
                if row.len() != t {
                    return Err(BackendError::Protocol(format!(
                        "expected {t} columns per row, got {}",
                        row.len()
                    )));
                }
                flat.extend_from_slice(row);
            }
        }
        let tensor = AttentionTensor::new(wire.num_heads, t, wire.causal, flat)?;
        Ok(AttentionResponse { tokens, tensor })
    }

    pub fn token_spans(&self) -> Vec<Span> {
        self.tokens.iter().map(|t| t.span).collect()
    }

    pub fn token_texts(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text.clone()).collect()
    }
}

/// The three wire routes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Generate,
    Embed,
    Attention,
}

impl Route {
    pub fn as_str(self) -> &'static str {
        match self {
            Route::Generate => "generate",
            Route::Embed => "embed",
            Route::Attention => "attention",
        }
    }
}

impl std::fmt::Display for Route {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// JSON with object keys emitted in sorted order at every depth, so the
/// rendering is independent of serialization field order.
pub fn canonical_json(value: &serde_json::Value) -> String {
    fn write(value: &serde_json::Value, out: &mut String) {
        match value {
            serde_json::Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (i, key) in keys.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::Value::String((*key).clone()).to_string());
                    out.push(':');
                    write(&map[*key], out);
                }
                out.push('}');
            }
            serde_json::Value::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(item, out);
                }
                out.push(']');
            }
            scalar => out.push_str(&scalar.to_string()),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

/// Content hash of a request: sha256 over the route name and the canonical
/// JSON rendering. Identical semantic fields hash identically regardless of
/// field order.
pub fn canonical_hash(route: Route, request: &serde_json::Value) -> String {
    let mut hasher = Sha256::new();
    hasher.update(route.as_str().as_bytes());
    hasher.update(b"\n");
    hasher.update(canonical_json(request).as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Text generation capability.
pub trait TextGenerator: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError>;
}

/// Embedding capability. Returns one raw (not necessarily unit-norm) vector
/// per input text; values depend only on the text, never on the batch.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError>;
}

/// Attention extraction capability.
pub trait AttentionProvider: Send + Sync {
    fn attention(&self, text: &str) -> Result<AttentionResponse, BackendError>;
}

/// All three capabilities behind one handle.
pub trait Backend: TextGenerator + Embedder + AttentionProvider {}

impl<T: TextGenerator + Embedder + AttentionProvider> Backend for T {}

#[derive(Serialize)]
struct GenerateWire<'a> {
    model: &'a str,
    prompt: &'a str,
    max_new_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    stop: Option<&'a [String]>,
}

#[derive(Serialize)]
struct EmbedWire<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Serialize)]
struct AttentionWire<'a> {
    model: &'a str,
    text: &'a str,
}

/// Raw attention payload as it crosses the wire.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionRespWire {
    pub tokens: Vec<TokenWire>,
    pub num_heads: usize,
    pub causal: bool,
    pub weights: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TokenWire {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Protocol client over any transport. Builds wire requests, validates
/// responses, and strips stop sequences; every mode shares this code path.
pub struct BackendClient {
    model: String,
    max_prompt_chars: Option<usize>,
    transport: Box<dyn Transport>,
}

/// A way to move one JSON request to a JSON response for a route.
pub trait Transport: Send + Sync {
    fn post(&self, route: Route, request: &serde_json::Value)
        -> Result<serde_json::Value, BackendError>;
}

impl BackendClient {
    /// Builds the client for the configured mode. Record and replay modes
    /// require a cassette path.
    pub fn from_config(cfg: &BackendConfig, cassette: Option<&Path>) -> Result<Self, BackendError> {
        let transport: Box<dyn Transport> = match cfg.mode {
            BackendMode::Live => Box::new(HttpTransport::new(cfg)?),
            BackendMode::Record => {
                let path = cassette.ok_or_else(|| {
                    BackendError::Protocol("record mode requires a cassette path".into())
                })?;
                Box::new(RecordTransport::create(HttpTransport::new(cfg)?, path)?)
            }
            BackendMode::Replay => {
                let path = cassette.ok_or_else(|| {
                    BackendError::Protocol("replay mode requires a cassette path".into())
                })?;
                Box::new(ReplayTransport::load(path)?)
            }
        };
        Ok(BackendClient {
            model: cfg.model.clone(),
            max_prompt_chars: cfg.max_prompt_chars,
            transport,
        })
    }

    pub fn with_transport(
        model: impl Into<String>,
        max_prompt_chars: Option<usize>,
        transport: Box<dyn Transport>,
    ) -> Self {
        BackendClient {
            model: model.into(),
            max_prompt_chars,
            transport,
        }
    }

    fn call(&self, route: Route, wire: serde_json::Value) -> Result<serde_json::Value, BackendError> {
        let response = self.transport.post(route, &wire)?;
        if let Some(err) = response.get("error") {
            let message = err.as_str().map(str::to_string).unwrap_or_else(|| err.to_string());
            return Err(BackendError::Protocol(format!("{route}: {message}")));
        }
        Ok(response)
    }
}

impl TextGenerator for BackendClient {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        if let Some(limit) = self.max_prompt_chars {
            let got = req.prompt.chars().count();
            if got > limit {
                return Err(BackendError::ContextLengthExceeded { limit, got });
            }
        }
        let wire = serde_json::to_value(GenerateWire {
            model: &self.model,
            prompt: &req.prompt,
            max_new_tokens: req.max_new_tokens,
            temperature: req.temperature,
            stop: req.stop.as_deref(),
        })
        .expect("serializable request");
        let response = self.call(Route::Generate, wire)?;
        let text = response
            .get("text")
            .and_then(|t| t.as_str())
            .ok_or_else(|| BackendError::Protocol("generate response lacks \"text\"".into()))?;
        Ok(strip_stop(text, req.stop.as_deref()))
    }
}

impl Embedder for BackendClient {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        let wire = serde_json::to_value(EmbedWire {
            model: &self.model,
            texts,
        })
        .expect("serializable request");
        let response = self.call(Route::Embed, wire)?;
        let embeddings: Vec<Vec<f32>> = serde_json::from_value(
            response
                .get("embeddings")
                .cloned()
                .ok_or_else(|| BackendError::Protocol("embed response lacks \"embeddings\"".into()))?,
        )
        .map_err(|e| BackendError::Protocol(format!("embed response malformed: {e}")))?;
        if embeddings.len() != texts.len() {
            return Err(BackendError::Protocol(format!(
                "embedded {} texts, got {} vectors",
                texts.len(),
                embeddings.len()
            )));
        }
        if let Some(first) = embeddings.first() {
            let dim = first.len();
            for (i, v) in embeddings.iter().enumerate() {
                if v.len() != dim {
                    return Err(BackendError::Protocol(format!(
                        "vector {i} has dimension {}, expected {dim}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(BackendError::Protocol(format!(
                        "vector {i} contains a non-finite value"
                    )));
                }
            }
        }
        Ok(embeddings)
    }
}

impl AttentionProvider for BackendClient {
    fn attention(&self, text: &str) -> Result<AttentionResponse, BackendError> {
        let wire = serde_json::to_value(AttentionWire {
            model: &self.model,
            text,
        })
        .expect("serializable request");
        let response = self.call(Route::Attention, wire)?;
        let parsed: AttentionRespWire = serde_json::from_value(response)
            .map_err(|e| BackendError::Protocol(format!("attention response malformed: {e}")))?;
        AttentionResponse::from_wire(text, parsed)
    }
}
