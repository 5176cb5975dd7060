//! Text to vector providers.
//!
//! [`HashingEmbedder`] is the offline provider: tokens, adjacent token pairs and
//! character trigrams are hashed (FNV-1a) into signed buckets, then the vector is
//! L2-normalized. It is a pure function of `(text, dim)` so vectors are stable
//! across processes. [`RemoteEmbedder`] talks to an HTTP endpoint that hosts a
//! real sentence-embedding model.

use std::hash::Hasher;
use std::time::Duration;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 384;
pub const DEFAULT_MAX_TEXT_BYTES: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("text of {len} bytes exceeds the {cap} byte cap")]
    TextTooLarge { len: usize, cap: usize },
    #[error("embedding contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("provider returned {got} dimensions, expected {expected}")]
    WrongDimension { expected: usize, got: usize },
    #[error("invalid embedding configuration: {0}")]
    Config(String),
}

impl EmbeddingError {
    pub fn kind(&self) -> &'static str {
        match self {
            EmbeddingError::ProviderUnavailable(_) => "ProviderUnavailable",
            EmbeddingError::TextTooLarge { .. } => "TextTooLarge",
            _ => "EmbeddingFailure",
        }
    }
}

/// A finite, fixed-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    /// Cosine similarity in `[-1, 1]`; zero when either vector is all zeros.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let mut dot = 0.0f64;
        let mut na = 0.0f64;
        let mut nb = 0.0f64;
        for (&a, &b) in self.0.iter().zip(other.0.iter()) {
            let (a, b) = (f64::from(a), f64::from(b));
            dot += a * b;
            na += a * a;
            nb += b * b;
        }
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// What to do with text above the byte cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Oversize {
    /// Embed the first `cap` bytes (cut back to a char boundary).
    #[default]
    Truncate,
    Reject,
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;

    /// Element-wise `embed`; the first failure aborts the batch.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

fn capped(text: &str, cap: usize, policy: Oversize) -> Result<&str, EmbeddingError> {
    if text.len() <= cap {
        return Ok(text);
    }
    match policy {
        Oversize::Reject => Err(EmbeddingError::TextTooLarge { len: text.len(), cap }),
        Oversize::Truncate => {
            let mut end = cap;
            while !text.is_char_boundary(end) {
                end -= 1;
            }
            Ok(&text[..end])
        }
    }
}

#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    max_text_bytes: usize,
    oversize: Oversize,
}

const TOKEN_WEIGHT: f32 = 1.0;
const PAIR_WEIGHT: f32 = 0.5;
const TRIGRAM_WEIGHT: f32 = 0.25;

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, max_text_bytes: DEFAULT_MAX_TEXT_BYTES, oversize: Oversize::Truncate }
    }

    pub fn with_cap(mut self, max_text_bytes: usize, oversize: Oversize) -> Self {
        self.max_text_bytes = max_text_bytes;
        self.oversize = oversize;
        self
    }

    fn add(&self, acc: &mut [f32], namespace: u8, feature: &str, weight: f32) {
        let mut h = FnvHasher::default();
        h.write_u8(namespace);
        h.write(feature.as_bytes());
        let hash = h.finish();
        let bucket = (hash % self.dim as u64) as usize;
        let sign = if hash >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign * weight;
    }
}

pub(crate) fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let text = capped(text, self.max_text_bytes, self.oversize)?;
        let tokens = tokenize(text);
        let mut acc = vec![0.0f32; self.dim];
        if tokens.is_empty() {
            // empty (or punctuation-only) text still gets a unit vector
            self.add(&mut acc, 0, "\u{0}empty", 1.0);
        }
        for token in &tokens {
            self.add(&mut acc, 1, token, TOKEN_WEIGHT);
            let padded: Vec<char> = format!("#{token}#").chars().collect();
            for tri in padded.windows(3) {
                let tri: String = tri.iter().collect();
                self.add(&mut acc, 3, &tri, TRIGRAM_WEIGHT);
            }
        }
        for pair in tokens.windows(2) {
            self.add(&mut acc, 2, &format!("{} {}", pair[0], pair[1]), PAIR_WEIGHT);
        }
        let norm = acc.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if norm == 0.0 {
            // every feature cancelled out; fall back to the sentinel bucket
            acc.iter_mut().for_each(|v| *v = 0.0);
            self.add(&mut acc, 0, "\u{0}empty", 1.0);
            return EmbeddingVector::new(acc);
        }
        EmbeddingVector::new(acc.iter().map(|&v| (f64::from(v) / norm) as f32).collect())
    }
}

#[derive(Debug, Serialize)]
struct RemoteRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct RemoteResponse {
    vectors: Vec<Vec<f32>>,
}

/// Client for an HTTP embedding endpoint: `{model, input[]}` -> `{vectors[][]}`.
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    dim: usize,
    max_text_bytes: usize,
    oversize: Oversize,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str, model: &str, dim: usize, timeout_ms: u64) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .build()
            .into();
        Self {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            dim,
            max_text_bytes: DEFAULT_MAX_TEXT_BYTES,
            oversize: Oversize::Truncate,
            agent,
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut out = self.embed_batch(&[text])?;
        out.pop().ok_or_else(|| EmbeddingError::ProviderUnavailable("empty response".into()))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let input = texts
            .iter()
            .map(|t| capped(t, self.max_text_bytes, self.oversize))
            .collect::<Result<Vec<_>, _>>()?;
        let body = RemoteRequest { model: &self.model, input: &input };
        let response: RemoteResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .and_then(|mut r| r.body_mut().read_json())
            .map_err(|e| EmbeddingError::ProviderUnavailable(e.to_string()))?;
        if response.vectors.len() != texts.len() {
            return Err(EmbeddingError::ProviderUnavailable(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                response.vectors.len()
            )));
        }
        response
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbeddingError::WrongDimension { expected: self.dim, got: v.len() });
                }
                EmbeddingVector::new(v)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    Remote,
    Deterministic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingProviderConfig {
    pub kind: EmbeddingKind,
    pub endpoint: Option<String>,
    pub model_name: String,
    pub dim: usize,
    pub timeout_ms: u64,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        Self {
            kind: EmbeddingKind::Deterministic,
            endpoint: None,
            model_name: "all-MiniLM-L6-v2".to_string(),
            dim: DEFAULT_DIM,
            timeout_ms: 30_000,
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn build(&self) -> Result<Box<dyn Embedder>, EmbeddingError> {
        if self.dim == 0 {
            return Err(EmbeddingError::Config("dim must be positive".into()));
        }
        if self.timeout_ms == 0 {
            return Err(EmbeddingError::Config("timeout_ms must be positive".into()));
        }
        match self.kind {
            EmbeddingKind::Deterministic => Ok(Box::new(HashingEmbedder::new(self.dim))),
            EmbeddingKind::Remote => {
                let endpoint = self
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| EmbeddingError::Config("remote provider needs an endpoint".into()))?;
                Ok(Box::new(RemoteEmbedder::new(endpoint, &self.model_name, self.dim, self.timeout_ms)))
            }
        }
    }
}
