//! Inference-time pose retrieval: prompt normalization, embedding, exact
//! top-1 search and confidence gating.
//!
//! The language model and sentence encoder are external services reached
//! through [`PromptNormalizer`] and [`TextEmbedder`]. Both have offline
//! stand-ins so the pipeline runs without any model server.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::index::{
    l2_normalize, mean_pool, EmbeddingVector, FlatIndex, IndexEntry, IndexError, IngestRecord,
    EMBEDDING_DIM,
};

pub const DEFAULT_ALPHA_U: f64 = 0.55;
pub const DEFAULT_CLIENT_TIMEOUT: Duration = Duration::from_secs(2);

/// Instruction template sent alongside prompts by normalization servers
/// that accept one. Versioned with the repository.
pub const NORMALIZATION_TEMPLATE: &str = include_str!("normalize_template.txt");

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request to {url} failed: {reason}")]
    Transport { url: String, reason: String },
    #[error("{url} returned status {status}")]
    Status { url: String, status: u16 },
    #[error("bad response from {url}: {reason}")]
    Response { url: String, reason: String },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("embedding failed: {0}")]
    Embedding(#[source] ClientError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("alpha_u {0} outside [0, 1]")]
    Gate(f64),
}

/// Raw user prompt; non-empty after trimming.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserPrompt(String);

impl UserPrompt {
    pub fn new(text: impl Into<String>) -> Result<Self, RetrievalError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(RetrievalError::EmptyPrompt);
        }
        Ok(Self(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySource {
    Normalized,
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalQuery {
    pub text: String,
    pub source: QuerySource,
    /// Set when the normalizer failed and the raw prompt was passed through.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    alpha_u: f64,
}

impl GateConfig {
    pub fn new(alpha_u: f64) -> Result<Self, RetrievalError> {
        if !(0.0..=1.0).contains(&alpha_u) {
            return Err(RetrievalError::Gate(alpha_u));
        }
        Ok(Self { alpha_u })
    }

    pub fn alpha_u(&self) -> f64 {
        self.alpha_u
    }
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            alpha_u: DEFAULT_ALPHA_U,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Accept,
    Bypass,
}

/// Accepts only scores that strictly exceed `alpha_u`.
pub fn gate(score: f64, cfg: &GateConfig) -> GateDecision {
    if score > cfg.alpha_u {
        GateDecision::Accept
    } else {
        GateDecision::Bypass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetrievalOutcome {
    Hit {
        id: u64,
        pose_ref: String,
        score: f64,
        prompt: String,
        canonical_query: CanonicalQuery,
    },
    Bypassed {
        best_score: Option<f64>,
        prompt: String,
        canonical_query: CanonicalQuery,
    },
}

impl RetrievalOutcome {
    pub fn is_hit(&self) -> bool {
        matches!(self, RetrievalOutcome::Hit { .. })
    }

    pub fn pose_ref(&self) -> Option<&str> {
        match self {
            RetrievalOutcome::Hit { pose_ref, .. } => Some(pose_ref),
            RetrievalOutcome::Bypassed { .. } => None,
        }
    }

    pub fn canonical_query(&self) -> &CanonicalQuery {
        match self {
            RetrievalOutcome::Hit {
                canonical_query, ..
            }
            | RetrievalOutcome::Bypassed {
                canonical_query, ..
            } => canonical_query,
        }
    }
}

// ---------------------------------------------------------------------------
// Client protocols

pub trait PromptNormalizer: Send + Sync {
    fn normalize(&self, text: &str) -> Result<String, ClientError>;
}

/// What an embedder hands back: a pooled vector or per-token rows that
/// still need mean pooling.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    Vector(Vec<f32>),
    Tokens(Vec<Vec<f32>>),
}

pub trait TextEmbedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, ClientError>;
}

impl<T: PromptNormalizer + ?Sized> PromptNormalizer for Box<T> {
    fn normalize(&self, text: &str) -> Result<String, ClientError> {
        (**self).normalize(text)
    }
}

impl<T: TextEmbedder + ?Sized> TextEmbedder for Box<T> {
    fn embed(&self, text: &str) -> Result<Embedding, ClientError> {
        (**self).embed(text)
    }
}

/// Pools (if needed) and re-normalizes an embedder response.
pub fn to_query_vector(embedding: Embedding) -> Result<EmbeddingVector, IndexError> {
    match embedding {
        Embedding::Vector(v) => l2_normalize(&v),
        Embedding::Tokens(rows) => l2_normalize(&mean_pool(&rows)?),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TextRequest {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NormalizeResponse {
    pub canonical: String,
}

pub(crate) fn post_json<B: Serialize, R: serde::de::DeserializeOwned>(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &B,
) -> Result<R, ClientError> {
    let resp = client
        .post(url)
        .json(body)
        .send()
        .map_err(|e| ClientError::Transport {
            url: url.to_string(),
            reason: e.to_string(),
        })?;
    let status = resp.status();
    if !status.is_success() {
        return Err(ClientError::Status {
            url: url.to_string(),
            status: status.as_u16(),
        });
    }
    resp.json().map_err(|e| ClientError::Response {
        url: url.to_string(),
        reason: e.to_string(),
    })
}

pub(crate) fn blocking_client(timeout: Duration) -> Result<reqwest::blocking::Client, ClientError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ClientError::Other(e.to_string()))
}

/// `POST {base}/embed {"text"} -> {"vector": [f32; 384]}`
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, ClientError> {
        Ok(Self {
            client: blocking_client(timeout)?,
            url: format!("{}/embed", base_url.trim_end_matches('/')),
        })
    }
}

impl TextEmbedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, ClientError> {
        let resp: EmbedResponse = post_json(
            &self.client,
            &self.url,
            &TextRequest {
                text: text.to_string(),
            },
        )?;
        if resp.vector.len() != EMBEDDING_DIM {
            return Err(ClientError::Response {
                url: self.url.clone(),
                reason: format!(
                    "expected {EMBEDDING_DIM} components, got {}",
                    resp.vector.len()
                ),
            });
        }
        Ok(Embedding::Vector(resp.vector))
    }
}

/// `POST {base}/normalize {"text"} -> {"canonical": string}`
pub struct HttpNormalizer {
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpNormalizer {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, ClientError> {
        Ok(Self {
            client: blocking_client(timeout)?,
            url: format!("{}/normalize", base_url.trim_end_matches('/')),
        })
    }
}

impl PromptNormalizer for HttpNormalizer {
    fn normalize(&self, text: &str) -> Result<String, ClientError> {
        let resp: NormalizeResponse = post_json(
            &self.client,
            &self.url,
            &TextRequest {
                text: text.to_string(),
            },
        )?;
        if resp.canonical.trim().is_empty() {
            return Err(ClientError::Response {
                url: self.url.clone(),
                reason: "empty canonical text".into(),
            });
        }
        Ok(resp.canonical)
    }
}

/// Deterministic offline embedder: lowercase word tokens are hashed into
/// signed buckets. Identical texts embed identically; texts sharing no
/// words are nearly orthogonal.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashingEmbedder;

impl HashingEmbedder {
    fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
    }
}

impl TextEmbedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, ClientError> {
        let mut v = vec![0.0f32; EMBEDDING_DIM];
        for token in Self::tokens(text) {
            let digest = Sha256::digest(token.as_bytes());
            let bucket =
                u64::from_le_bytes(digest[..8].try_into().unwrap()) as usize % EMBEDDING_DIM;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err(ClientError::Other(format!(
                "no embeddable tokens in {text:?}"
            )));
        }
        Ok(Embedding::Vector(v))
    }
}

/// Tries `primary`, then `fallback` when the primary fails.
pub struct FallbackEmbedder<P, F> {
    pub primary: P,
    pub fallback: F,
}

impl<P: TextEmbedder, F: TextEmbedder> TextEmbedder for FallbackEmbedder<P, F> {
    fn embed(&self, text: &str) -> Result<Embedding, ClientError> {
        self.primary.embed(text).or_else(|err| {
            log::warn!("primary embedder failed ({err}); using fallback");
            self.fallback.embed(text)
        })
    }
}

pub enum Normalization {
    Passthrough,
    Client(Box<dyn PromptNormalizer>),
}

/// Rewrites the prompt with the client when one is configured. Client
/// failures degrade to passthrough with a warning.
pub fn normalize_prompt(prompt: &UserPrompt, normalization: &Normalization) -> CanonicalQuery {
    let passthrough = |warning: Option<String>| CanonicalQuery {
        text: prompt.as_str().to_string(),
        source: QuerySource::Passthrough,
        warning,
    };
    match normalization {
        Normalization::Passthrough => passthrough(None),
        Normalization::Client(client) => match client.normalize(prompt.as_str()) {
            Ok(text) if !text.trim().is_empty() => CanonicalQuery {
                text,
                source: QuerySource::Normalized,
                warning: None,
            },
            Ok(_) => {
                log::warn!("normalizer returned empty text; passing prompt through");
                passthrough(Some("normalizer returned empty text".into()))
            }
            Err(err) => {
                log::warn!("normalizer failed ({err}); passing prompt through");
                passthrough(Some(err.to_string()))
            }
        },
    }
}

/// The full retrieval pipeline over one immutable index.
pub struct Retriever {
    pub normalization: Normalization,
    pub embedder: Box<dyn TextEmbedder>,
    pub gate: GateConfig,
}

impl Retriever {
    pub fn new(
        normalization: Normalization,
        embedder: Box<dyn TextEmbedder>,
        gate: GateConfig,
    ) -> Self {
        Self {
            normalization,
            embedder,
            gate,
        }
    }

    pub fn retrieve(
        &self,
        prompt: &UserPrompt,
        index: &FlatIndex,
    ) -> Result<RetrievalOutcome, RetrievalError> {
        retrieve(
            prompt,
            index,
            &self.normalization,
            self.embedder.as_ref(),
            &self.gate,
        )
    }
}

pub fn retrieve(
    prompt: &UserPrompt,
    index: &FlatIndex,
    normalization: &Normalization,
    embedder: &dyn TextEmbedder,
    cfg: &GateConfig,
) -> Result<RetrievalOutcome, RetrievalError> {
    let canonical_query = normalize_prompt(prompt, normalization);
    let prompt_text = prompt.as_str().to_string();
    if index.is_empty() {
        return Ok(RetrievalOutcome::Bypassed {
            best_score: None,
            prompt: prompt_text,
            canonical_query,
        });
    }
    let embedding = embedder
        .embed(&canonical_query.text)
        .map_err(RetrievalError::Embedding)?;
    let query = to_query_vector(embedding)?;
    let top = index
        .search(&query, 1)?
        .into_iter()
        .next()
        .expect("non-empty index yields a hit");
    Ok(match gate(top.score, cfg) {
        GateDecision::Accept => {
            let meta = index.get(top.id).expect("hit ids come from the index");
            RetrievalOutcome::Hit {
                id: top.id,
                pose_ref: meta.pose_ref.clone(),
                score: top.score,
                prompt: prompt_text,
                canonical_query,
            }
        }
        GateDecision::Bypass => RetrievalOutcome::Bypassed {
            best_score: Some(top.score),
            prompt: prompt_text,
            canonical_query,
        },
    })
}

/// Turns ingest records into index entries, embedding records that carry
/// no vector.
pub fn embed_records(
    records: Vec<IngestRecord>,
    embedder: &dyn TextEmbedder,
) -> Result<Vec<IndexEntry>, RetrievalError> {
    records
        .into_iter()
        .map(|r| {
            let vector = match r.vector {
                Some(v) => l2_normalize(&v)?,
                None => to_query_vector(
                    embedder
                        .embed(&r.prompt)
                        .map_err(RetrievalError::Embedding)?,
                )?,
            };
            Ok(IndexEntry {
                id: r.id,
                prompt: r.prompt,
                pose_ref: r.pose_ref,
                vector,
            })
        })
        .collect()
}
