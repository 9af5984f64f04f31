//! Text embedding providers and cosine similarity.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::http::{HttpClient, HttpEndpoint};
use crate::error::ProviderError;

/// A text embedding backend. Implementations must be deterministic within a
/// session and must never be asked to embed empty text.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    fn embed(&self, text: &str) -> Result<Arc<Vec<f64>>, ProviderError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Arc<Vec<f64>>>, ProviderError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<T> {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }
    fn embed(&self, text: &str) -> Result<Arc<Vec<f64>>, ProviderError> {
        (**self).embed(text)
    }
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Arc<Vec<f64>>>, ProviderError> {
        (**self).embed_batch(texts)
    }
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, ProviderError> {
    if u.len() != v.len() {
        return Err(ProviderError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(ProviderError::ZeroVector);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Cosine similarity of two texts under `embedder`.
pub fn text_similarity(
    embedder: &dyn EmbeddingProvider,
    a: &str,
    b: &str,
) -> Result<f64, ProviderError> {
    let ea = embedder.embed(a)?;
    let eb = embedder.embed(b)?;
    cosine_sim(&ea, &eb)
}

pub const HASH_EMBED_DIM: usize = 256;
const HASH_PROBES: u64 = 4;

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed.wrapping_mul(0x9e3779b97f4a7c15);
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    // final avalanche so low bits depend on every byte
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51afd7ed558ccd);
    h ^= h >> 33;
    h
}

/// Splits text into lowercase tokens: whitespace-separated words with
/// surrounding ASCII punctuation removed. A word made only of punctuation is
/// kept verbatim.
pub fn hash_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            let trimmed = w.trim_matches(|c: char| c.is_ascii_punctuation());
            if trimmed.is_empty() { w } else { trimmed }.to_lowercase()
        })
        .collect()
}

/// Deterministic feature-hashing embedder for offline use and tests.
///
/// Every token adds ±1 to `HASH_PROBES` buckets of a 256-dimensional vector;
/// the result is L2-normalized. Identical texts give identical vectors and
/// texts with disjoint vocabularies are close to orthogonal.
#[derive(Debug, Clone, Default)]
pub struct HashEmbedder;

impl HashEmbedder {
    pub fn new() -> Self {
        Self
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let mut v = vec![0.0f64; HASH_EMBED_DIM];
        for token in hash_tokens(text) {
            for probe in 0..HASH_PROBES {
                let h = fnv1a(token.as_bytes(), probe);
                let bucket = (h % HASH_EMBED_DIM as u64) as usize;
                let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
                v[bucket] += sign;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Probes cancelled out exactly; fall back to hashing the whole
            // string so non-empty text never yields the zero vector.
            let h = fnv1a(text.as_bytes(), HASH_PROBES);
            v[(h % HASH_EMBED_DIM as u64) as usize] = 1.0;
            return Ok(v);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn provider_id(&self) -> &str {
        "hash-256"
    }

    fn embed(&self, text: &str) -> Result<Arc<Vec<f64>>, ProviderError> {
        self.embed_text(text).map(Arc::new)
    }
}

pub const MAX_EMBED_BATCH: usize = 64;

/// OpenAI-compatible embeddings client: POSTs `{"model", "input": [...]}`
/// and reads `{"data": [{"embedding": [...]}]}`. Results are cached per
/// session by a content hash of `(provider_id, text)`.
pub struct HttpEmbedClient {
    provider_id: String,
    endpoint: HttpEndpoint,
    model: String,
    http: HttpClient,
    cache: Mutex<HashMap<[u8; 32], Arc<Vec<f64>>>>,
}

impl HttpEmbedClient {
    pub fn new(endpoint: HttpEndpoint, model: impl Into<String>, http: HttpClient) -> Self {
        let model = model.into();
        Self {
            provider_id: format!("http:{}:{}", endpoint.url, model),
            endpoint,
            model,
            http,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn cache_key(&self, text: &str) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.provider_id.as_bytes());
        hasher.update([0u8]);
        hasher.update(text.as_bytes());
        let mut key = [0u8; 32];
        key.copy_from_slice(&hasher.finalize());
        key
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let body = json!({ "model": self.model, "input": texts });
        let resp = self.http.post_json(&self.endpoint, &body)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Schema("missing `data` array".into()))?;
        if data.len() != texts.len() {
            return Err(ProviderError::Schema(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        let mut out: Vec<Option<Vec<f64>>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .map(|i| i as usize)
                .unwrap_or(pos);
            let emb = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| ProviderError::Schema("missing `embedding`".into()))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .filter(|f| f.is_finite())
                        .ok_or_else(|| ProviderError::Schema("non-numeric embedding".into()))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            let slot = out
                .get_mut(index)
                .ok_or_else(|| ProviderError::Schema(format!("embedding index {index} out of range")))?;
            *slot = Some(emb);
        }
        out.into_iter()
            .map(|e| e.ok_or_else(|| ProviderError::Schema("duplicate embedding index".into())))
            .collect()
    }
}

impl EmbeddingProvider for HttpEmbedClient {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn embed(&self, text: &str) -> Result<Arc<Vec<f64>>, ProviderError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Arc<Vec<f64>>>, ProviderError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(ProviderError::EmptyText);
        }
        let keys: Vec<[u8; 32]> = texts.iter().map(|t| self.cache_key(t)).collect();
        let mut pending: Vec<&str> = Vec::new();
        {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            for (t, k) in texts.iter().zip(&keys) {
                if !cache.contains_key(k) && !pending.contains(t) {
                    pending.push(t);
                }
            }
        }
        for chunk in pending.chunks(MAX_EMBED_BATCH) {
            let vectors = self.request(chunk)?;
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            for (t, v) in chunk.iter().zip(vectors) {
                cache.insert(self.cache_key(t), Arc::new(v));
            }
        }
        let cache = self.cache.lock().expect("embedding cache poisoned");
        Ok(keys.iter().map(|k| Arc::clone(&cache[k])).collect())
    }
}
