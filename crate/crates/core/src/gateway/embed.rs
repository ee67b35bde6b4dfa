use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::http::{endpoint_url, JsonPoster, RetryPolicy};
use super::{EmbedBackend, EmbedBackendConfig, EmbeddingVector, GatewayError};

/// Offline pseudo-embedding built by feature hashing.
///
/// Each token seeds a ChaCha stream from `sha256(seed || token)` and
/// contributes a `dim`-long vector drawn uniformly from `[-1, 1)`; the token
/// vectors are summed and the result scaled to unit length. Equal strings map
/// to equal vectors and queries that share words land close together. Latin
/// text is split on non-alphanumerics and lowercased; CJK ideographs are one
/// token each.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, GatewayError> {
        if dim == 0 {
            return Err(GatewayError::Config("embedding dim must be positive".into()));
        }
        Ok(HashEmbedder { dim, seed })
    }

    fn token_vector(&self, token: &str, out: &mut [f64]) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        for v in out.iter_mut() {
            *v += rng.random_range(-1.0..1.0);
        }
    }
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2FA1F)
}

pub(crate) fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if is_cjk(c) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_string());
        } else if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

impl EmbedBackend for HashEmbedder {
    fn name(&self) -> &str {
        "hash"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("cannot embed empty text".into()));
        }
        let mut toks = tokens(text);
        if toks.is_empty() {
            // punctuation-only input: hash it whole
            toks.push(text.trim().to_string());
        }
        let mut acc = vec![0.0; self.dim];
        for t in &toks {
            self.token_vector(t, &mut acc);
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(EmbeddingVector::new(acc))
    }
}

/// OpenAI-compatible `/embeddings` client.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    poster: JsonPoster,
    model: String,
    dim: usize,
}

impl HttpEmbedder {
    pub fn from_config(cfg: &EmbedBackendConfig) -> Result<Self, GatewayError> {
        let endpoint = cfg
            .endpoint
            .as_deref()
            .ok_or_else(|| GatewayError::Config("http embedding backend needs an endpoint".into()))?;
        let model =
            cfg.model.clone().ok_or_else(|| GatewayError::Config("http embedding backend needs a model".into()))?;
        if cfg.dim == 0 {
            return Err(GatewayError::Config("embedding dim must be positive".into()));
        }
        let poster = JsonPoster::new(
            endpoint_url(endpoint, "/embeddings"),
            cfg.api_key.clone(),
            Duration::from_secs(cfg.timeout_secs),
            RetryPolicy { retries: cfg.retries, backoff: Duration::from_millis(cfg.backoff_ms) },
            cfg.verbose,
        )?;
        Ok(HttpEmbedder { poster, model, dim: cfg.dim })
    }
}

impl EmbedBackend for HttpEmbedder {
    fn name(&self) -> &str {
        "http"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        if text.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("cannot embed empty text".into()));
        }
        let resp = self.poster.post(&json!({"model": self.model, "input": text}))?;
        let values = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::Decode(format!("no data[0].embedding in {resp}")))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| GatewayError::Decode("non-numeric embedding value".into())))
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != self.dim {
            return Err(GatewayError::Decode(format!(
                "embedding has dim {}, configured dim is {}",
                values.len(),
                self.dim
            )));
        }
        Ok(EmbeddingVector::new(values))
    }
}
