//! Deterministic in-process transport. Stands in for a live model during
//! tests, cassette generation, and offline runs: outputs depend only on the
//! request text, never on call order or batching.

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{BackendError, Route, Transport};

fn text_seed(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn short_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

pub struct FixtureTransport {
    dim: usize,
    attention_overrides: HashMap<String, Value>,
    fail_generate_containing: Option<String>,
}

impl FixtureTransport {
    pub fn new(dim: usize) -> Self {
        FixtureTransport {
            dim,
            attention_overrides: HashMap::new(),
            fail_generate_containing: None,
        }
    }

    /// Serves `response` for an attention request over exactly `text`.
    pub fn with_attention_override(mut self, text: impl Into<String>, response: Value) -> Self {
        self.attention_overrides.insert(text.into(), response);
        self
    }

    /// Failure injection: generate calls whose prompt contains `marker` fail.
    pub fn failing_generate_containing(mut self, marker: impl Into<String>) -> Self {
        self.fail_generate_containing = Some(marker.into());
        self
    }

    /// Pseudo-embedding derived from the text alone.
    pub fn embedding_for(dim: usize, text: &str) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(text_seed(text));
        (0..dim).map(|_| rng.random_range(-1.0f32..1.0f32)).collect()
    }

    /// Deterministic stand-in completion for a prompt.
    pub fn completion_for(prompt: &str) -> String {
        format!("gen-{}", short_hash(prompt))
    }

    /// Whitespace tokens with byte spans, preceded by a `<s>` marker with an
    /// empty span.
    pub fn tokenize(text: &str) -> Vec<(String, usize, usize)> {
        let mut tokens = vec![("<s>".to_string(), 0, 0)];
        let mut start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if c.is_whitespace() {
                if let Some(s) = start.take() {
                    tokens.push((text[s..i].to_string(), s, i));
                }
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            tokens.push((text[s..].to_string(), s, text.len()));
        }
        tokens
    }

    /// Uniform causal attention over the fixture tokenization, two equal heads.
    pub fn uniform_attention_response(text: &str) -> Value {
        let tokens = Self::tokenize(text);
        let t = tokens.len();
        let row = |i: usize| -> Vec<f64> {
            (0..t)
                .map(|j| if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 })
                .collect()
        };
        let head: Vec<Vec<f64>> = (0..t).map(row).collect();
        json!({
            "tokens": tokens
                .iter()
                .map(|(text, start, end)| json!({"text": text, "start": start, "end": end}))
                .collect::<Vec<_>>(),
            "num_heads": 2,
            "causal": true,
            "weights": [head.clone(), head],
        })
    }
}

impl Default for FixtureTransport {
    fn default() -> Self {
        FixtureTransport::new(64)
    }
}

impl Transport for FixtureTransport {
    fn post(&self, route: Route, request: &Value) -> Result<Value, BackendError> {
        match route {
            Route::Generate => {
                let prompt = request
                    .get("prompt")
                    .and_then(Value::as_str)
                    .ok_or_else(|| BackendError::Protocol("generate request lacks prompt".into()))?;
                if let Some(marker) = &self.fail_generate_containing {
                    if prompt.contains(marker.as_str()) {
                        return Err(BackendError::Protocol("injected generate failure".into()));
                    }
                }
                Ok(json!({"text": Self::completion_for(prompt)}))
            }
            Route::Embed => {
                let texts = request
                    .get("texts")
                    .and_then(Value::as_array)
                    .ok_or_else(|| BackendError::Protocol("embed request lacks texts".into()))?;
                let mut embeddings = Vec::with_capacity(texts.len());
                for t in texts {
                    let text = t
                        .as_str()
                        .ok_or_else(|| BackendError::Protocol("non-string embed text".into()))?;
                    embeddings.push(Self::embedding_for(self.dim, text));
                }
                Ok(json!({"embeddings": embeddings}))
            }
            Route::Attention => {
                let text = request
                    .get("text")
                    .and_then(Value::as_str)
                    .ok_or_else(|| BackendError::Protocol("attention request lacks text".into()))?;
                if let Some(overridden) = self.attention_overrides.get(text) {
                    return Ok(overridden.clone());
                }
                Ok(Self::uniform_attention_response(text))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{AttentionProvider, BackendClient, Embedder};

    fn client(dim: usize) -> BackendClient {
        BackendClient::with_transport("fixture", None, Box::new(FixtureTransport::new(dim)))
    }

    #[test]
    fn embeddings_are_batch_invariant() {
        let texts: Vec<String> = (0..64).map(|i| format!("sentence {i}")).collect();
        let c = client(16);
        let whole = c.embed(&texts).unwrap();
        let mut split = c.embed(&texts[..32]).unwrap();
        split.extend(c.embed(&texts[32..]).unwrap());
        assert_eq!(whole, split);
        // And stable across repeat calls.
        assert_eq!(whole, c.embed(&texts).unwrap());
    }

    #[test]
    fn attention_passes_validation() {
        let c = client(8);
        let resp = c.attention("one two three").unwrap();
        assert_eq!(resp.tokens.len(), 4); // <s> + 3 words
        assert_eq!(resp.tokens[0].text, "<s>");
        assert!(resp.tokens[0].span.is_empty());
        assert_eq!(resp.tokens[2].text, "two");
        assert!(resp.tensor.causal());
        assert_eq!(resp.tensor.num_heads(), 2);
    }

    #[test]
    fn bad_override_is_caught_by_client_validation() {
        let transport = FixtureTransport::new(8).with_attention_override(
            "x",
            serde_json::json!({
                "tokens": [{"text": "x", "start": 0, "end": 1}],
                "num_heads": 1,
                "causal": true,
                "weights": [[[0.5]]],
            }),
        );
        let c = BackendClient::with_transport("fixture", None, Box::new(transport));
        assert!(c.attention("x").is_err());
    }
}
