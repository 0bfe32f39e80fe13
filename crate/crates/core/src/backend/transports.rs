//! Wire transports: live HTTP with retry, cassette recording, and hermetic
//! replay keyed by canonical request hashes.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{canonical_hash, count_network_op, BackendConfig, BackendError, Route, Transport};

/// Live JSON-over-HTTP transport. POSTs `{endpoint}/{route}`, retries
/// transport failures and 5xx responses with a fixed backoff, and counts
/// every attempt as a network operation.
pub struct HttpTransport {
    generate_url: String,
    embed_url: String,
    attention_url: String,
    client: reqwest::blocking::Client,
    max_retries: u32,
    backoff: Duration,
    timeout: Duration,
}

fn join_route(endpoint: &str, route: Route) -> String {
    format!("{}/{}", endpoint.trim_end_matches('/'), route.as_str())
}

impl HttpTransport {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout())
            .build()
            .map_err(|e| BackendError::Protocol(format!("http client: {e}")))?;
        Ok(HttpTransport {
            generate_url: join_route(&cfg.endpoint, Route::Generate),
            embed_url: join_route(
                cfg.embed_endpoint.as_deref().unwrap_or(&cfg.endpoint),
                Route::Embed,
            ),
            attention_url: join_route(
                cfg.attention_endpoint.as_deref().unwrap_or(&cfg.endpoint),
                Route::Attention,
            ),
            client,
            max_retries: cfg.max_retries,
            backoff: cfg.retry_backoff(),
            timeout: cfg.timeout(),
        })
    }

    fn url(&self, route: Route) -> &str {
        match route {
            Route::Generate => &self.generate_url,
            Route::Embed => &self.embed_url,
            Route::Attention => &self.attention_url,
        }
    }
}

impl Transport for HttpTransport {
    fn post(&self, route: Route, request: &Value) -> Result<Value, BackendError> {
        let url = self.url(route);
        let mut attempt = 0u32;
        loop {
            count_network_op();
            let outcome = self.client.post(url).json(request).send();
            let retriable = match &outcome {
                Ok(resp) => resp.status().is_server_error(),
                Err(_) => true,
            };
            if retriable && attempt < self.max_retries {
                attempt += 1;
                std::thread::sleep(self.backoff);
                continue;
            }
            return match outcome {
                Ok(resp) if resp.status().is_success() => resp
                    .json()
                    .map_err(|e| BackendError::Protocol(format!("{route}: invalid JSON: {e}"))),
                Ok(resp) => {
                    let status = resp.status();
                    let body = resp.text().unwrap_or_default();
                    let snippet: String = body.chars().take(200).collect();
                    Err(BackendError::Protocol(format!(
                        "{route} returned {status}: {snippet}"
                    )))
                }
                Err(e) if e.is_timeout() => Err(BackendError::Timeout(self.timeout)),
                Err(e) => Err(BackendError::Protocol(format!("{route}: {e}"))),
            };
        }
    }
}

/// One recorded exchange. The response is stored raw, before validation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub hash: String,
    pub route: String,
    pub request: Value,
    pub response: Value,
}

/// A JSON-lines file of recorded exchanges.
#[derive(Clone, Debug, Default)]
pub struct Cassette {
    pub entries: Vec<CassetteEntry>,
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let file = File::open(path)?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(&line).map_err(|e| {
                BackendError::Protocol(format!(
                    "cassette {} line {}: {e}",
                    path.display(),
                    i + 1
                ))
            })?;
            entries.push(entry);
        }
        Ok(Cassette { entries })
    }
}

/// Hermetic transport answering from a cassette. Never opens a network
/// connection; a request without a recorded response is an error.
pub struct ReplayTransport {
    responses: HashMap<String, Value>,
}

impl ReplayTransport {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Ok(ReplayTransport::from_cassette(&Cassette::load(path)?))
    }

    pub fn from_cassette(cassette: &Cassette) -> Self {
        let responses = cassette
            .entries
            .iter()
            .map(|e| (e.hash.clone(), e.response.clone()))
            .collect();
        ReplayTransport { responses }
    }
}

impl Transport for ReplayTransport {
    fn post(&self, route: Route, request: &Value) -> Result<Value, BackendError> {
        let hash = canonical_hash(route, request);
        self.responses
            .get(&hash)
            .cloned()
            .ok_or_else(|| BackendError::ReplayMiss {
                route: route.as_str().to_string(),
                hash,
            })
    }
}

/// Pass-through transport that appends each new exchange to a cassette file,
/// deduplicated by request hash.
pub struct RecordTransport<T: Transport> {
    inner: T,
    sink: Mutex<RecordSink>,
    path: PathBuf,
}

struct RecordSink {
    writer: BufWriter<File>,
    seen: HashSet<String>,
}

impl<T: Transport> RecordTransport<T> {
    pub fn create(inner: T, path: &Path) -> Result<Self, BackendError> {
        let file = File::create(path)?;
        Ok(RecordTransport {
            inner,
            sink: Mutex::new(RecordSink {
                writer: BufWriter::new(file),
                seen: HashSet::new(),
            }),
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl<T: Transport> Transport for RecordTransport<T> {
    fn post(&self, route: Route, request: &Value) -> Result<Value, BackendError> {
        let response = self.inner.post(route, request)?;
        let hash = canonical_hash(route, request);
        let mut sink = self.sink.lock().expect("cassette writer poisoned");
        if sink.seen.insert(hash.clone()) {
            let entry = CassetteEntry {
                hash,
                route: route.as_str().to_string(),
                request: request.clone(),
                response: response.clone(),
            };
            let line = serde_json::to_string(&entry).expect("serializable cassette entry");
            writeln!(sink.writer, "{line}")?;
            sink.writer.flush()?;
        }
        Ok(response)
    }
}
