//! Frozen dialogue encoders.

use std::time::Duration;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::num::Scalar;

pub const ENV_EMBED_BASE_URL: &str = "CRS_EMBED_BASE_URL";
pub const ENV_EMBED_MODEL: &str = "CRS_EMBED_MODEL";
pub const ENV_EMBED_API_KEY: &str = "CRS_EMBED_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueEmbedding {
    pub vector: Vec<f64>,
    pub provider_id: String,
    pub text_hash: String,
}

impl DialogueEmbedding {
    pub fn zeros(dim: usize, provider_id: impl Into<String>) -> Self {
        Self {
            vector: vec![0.0; dim],
            provider_id: provider_id.into(),
            text_hash: text_hash(""),
        }
    }

    pub fn to_array<T: Scalar>(&self) -> Array1<T> {
        self.vector.iter().map(|&x| T::lit(x)).collect()
    }
}

pub fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// A text encoder whose parameters never change.
pub trait DialogueEncoder: Send + Sync {
    fn encode(&self, text: &str) -> Result<DialogueEmbedding>;

    fn dim(&self) -> usize;

    fn provider_id(&self) -> String;
}

/// Offline encoder: character 3- to 5-grams hashed into `dim` signed buckets,
/// then L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedNgramEncoder {
    dim: usize,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(chars: &[char]) -> u64 {
    let mut h = FNV_OFFSET;
    let mut buf = [0u8; 4];
    for c in chars {
        for b in c.encode_utf8(&mut buf).bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

impl HashedNgramEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("encoder dimension must be positive".into()));
        }
        Ok(Self { dim })
    }

    /// Bucket and sign of one n-gram.
    pub fn bucket(&self, gram: &[char]) -> (usize, f64) {
        let h = fnv1a(gram);
        let bucket = (h % self.dim as u64) as usize;
        // sign from the high bits, independent of the bucket index
        let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
        (bucket, sign)
    }

    pub fn ngrams(text: &str) -> Vec<Vec<char>> {
        let chars: Vec<char> = text.to_lowercase().chars().collect();
        let mut out = Vec::new();
        for n in 3..=5 {
            if chars.len() >= n {
                out.extend(chars.windows(n).map(<[char]>::to_vec));
            }
        }
        out
    }
}

impl DialogueEncoder for HashedNgramEncoder {
    fn encode(&self, text: &str) -> Result<DialogueEmbedding> {
        if text.trim().is_empty() {
            return Err(Error::Argument("cannot encode empty text".into()));
        }
        let mut v = vec![0.0f64; self.dim];
        for gram in Self::ngrams(text) {
            let (b, s) = self.bucket(&gram);
            v[b] += s;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        } else {
            // fewer than three characters, or every bucket cancelled out
            v[fnv1a(&text.chars().collect::<Vec<_>>()) as usize % self.dim] = 1.0;
        }
        Ok(DialogueEmbedding {
            vector: v,
            provider_id: self.provider_id(),
            text_hash: text_hash(text),
        })
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn provider_id(&self) -> String {
        format!("hashed-ngram-3-5:{}", self.dim)
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbeddingEncoder {
    base_url: String,
    model: String,
    api_key: Option<String>,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingEncoder {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        dim: usize,
        timeout: Duration,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            dim,
            client,
        })
    }

    pub fn from_env(dim: usize) -> Result<Self> {
        let base = std::env::var(ENV_EMBED_BASE_URL)
            .map_err(|_| Error::Config(format!("{ENV_EMBED_BASE_URL} is not set")))?;
        let model = std::env::var(ENV_EMBED_MODEL)
            .map_err(|_| Error::Config(format!("{ENV_EMBED_MODEL} is not set")))?;
        Self::new(base, model, std::env::var(ENV_EMBED_API_KEY).ok(), dim, Duration::from_secs(30))
    }
}

impl DialogueEncoder for HttpEmbeddingEncoder {
    fn encode(&self, text: &str) -> Result<DialogueEmbedding> {
        if text.trim().is_empty() {
            return Err(Error::Argument("cannot encode empty text".into()));
        }
        let mut req = self
            .client
            .post(format!("{}/embeddings", self.base_url))
            .json(&json!({"model": self.model, "input": text}));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Error::Embedding(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(Error::Embedding(format!("status {}", resp.status())));
        }
        let body: serde_json::Value = resp.json().map_err(|e| Error::Embedding(e.to_string()))?;
        let vector: Vec<f64> = body["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| Error::Embedding("response has no data[0].embedding".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| Error::Embedding("non-numeric embedding".into())))
            .collect::<Result<_>>()?;
        if vector.len() != self.dim {
            return Err(Error::Embedding(format!(
                "provider returned {} dimensions, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Embedding("non-finite embedding".into()));
        }
        Ok(DialogueEmbedding {
            vector,
            provider_id: self.provider_id(),
            text_hash: text_hash(text),
        })
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn provider_id(&self) -> String {
        format!("http:{}@{}", self.model, self.base_url)
    }
}
