//! Pluggable model interfaces (embedder, edge voter, label predictor), a
//! deterministic hash-based embedder and content-addressed replay stores.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::numeric::sha256_hex;
use crate::types::{Channel, ExposureLevel, Margin, TaskLabelRecord};

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider failure: {0}")]
    Failed(String),
    #[error("no replay entry for {kind} digest {digest}")]
    MissingReplay { kind: &'static str, digest: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("replay store: {0}")]
    Store(String),
}

pub trait EmbeddingProvider: Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

/// Judges whether a candidate task belongs to an industry activity. The
/// replicate index distinguishes repeated votes on the same pair.
pub trait EdgeVoter: Sync {
    fn vote(&self, task: &str, activity: &str, replicate: u32) -> Result<bool, ProviderError>;
}

/// The label fields compared by agreement metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreLabels {
    pub exposure: ExposureLevel,
    pub channel: Channel,
    pub margin: Margin,
    pub ai_material: bool,
}

impl From<&TaskLabelRecord> for CoreLabels {
    fn from(r: &TaskLabelRecord) -> Self {
        CoreLabels { exposure: r.exposure, channel: r.channel, margin: r.margin, ai_material: r.ai_material }
    }
}

/// Recovers labels from a task statement and its rationale alone.
pub trait LabelPredictor: Sync {
    fn predict(&self, task: &str, rationale: &str) -> Result<CoreLabels, ProviderError>;
}

/// Calls `f` up to `attempts` times, retrying only transient failures.
pub fn with_retries<T>(attempts: u32, mut f: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
    let attempts = attempts.max(1);
    let mut last = String::new();
    for _ in 0..attempts {
        match f() {
            Ok(v) => return Ok(v),
            Err(ProviderError::Transient(msg)) => last = msg,
            Err(e) => return Err(e),
        }
    }
    Err(ProviderError::Exhausted { attempts, last })
}

/// Feature-hashing bag-of-words embedder. Same text, same vector; texts with
/// no shared tokens are orthogonal unless their hashes collide.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: 256 }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let mut v = vec![0.0; self.dim.max(1)];
        for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let h = sha256_hex(token.to_lowercase().as_bytes());
            let bits = u64::from_str_radix(&h[..16], 16).expect("hex digest");
            let slot = (bits % v.len() as u64) as usize;
            let sign = if (bits >> 63) & 1 == 0 { 1.0 } else { -1.0 };
            v[slot] += sign;
        }
        Ok(v)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| (dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn embedding_digest(text: &str) -> String {
    sha256_hex(text.as_bytes())
}

pub fn vote_digest(task: &str, activity: &str, replicate: u32) -> String {
    sha256_hex(format!("{task}\u{1f}{activity}\u{1f}{replicate}").as_bytes())
}

pub fn prediction_digest(task: &str, rationale: &str) -> String {
    sha256_hex(format!("{task}\u{1f}{rationale}").as_bytes())
}

/// A JSON object mapping input digests to recorded outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplayStore<T> {
    entries: BTreeMap<String, T>,
}

impl<T> Default for ReplayStore<T> {
    fn default() -> Self {
        ReplayStore { entries: BTreeMap::new() }
    }
}

impl<T: Serialize + DeserializeOwned + Clone> ReplayStore<T> {
    pub fn load<R: Read>(reader: R) -> Result<Self, ProviderError> {
        serde_json::from_reader(reader).map_err(|e| ProviderError::Store(e.to_string()))
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), ProviderError> {
        serde_json::to_writer_pretty(writer, self).map_err(|e| ProviderError::Store(e.to_string()))
    }

    pub fn insert(&mut self, digest: String, value: T) {
        self.entries.insert(digest, value);
    }

    pub fn get(&self, kind: &'static str, digest: &str) -> Result<T, ProviderError> {
        self.entries
            .get(digest)
            .cloned()
            .ok_or_else(|| ProviderError::MissingReplay { kind, digest: digest.to_string() })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReplayEmbedder(pub ReplayStore<Vec<f64>>);

impl ReplayEmbedder {
    /// Records `inner`'s output for each text.
    pub fn record<'a>(
        inner: &dyn EmbeddingProvider,
        texts: impl IntoIterator<Item = &'a str>,
    ) -> Result<Self, ProviderError> {
        let mut store = ReplayStore::default();
        for t in texts {
            store.insert(embedding_digest(t), inner.embed(t)?);
        }
        Ok(ReplayEmbedder(store))
    }
}

impl EmbeddingProvider for ReplayEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        self.0.get("embedding", &embedding_digest(text))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReplayVoter(pub ReplayStore<bool>);

impl EdgeVoter for ReplayVoter {
    fn vote(&self, task: &str, activity: &str, replicate: u32) -> Result<bool, ProviderError> {
        self.0.get("vote", &vote_digest(task, activity, replicate))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReplayPredictor(pub ReplayStore<CoreLabels>);

impl LabelPredictor for ReplayPredictor {
    fn predict(&self, task: &str, rationale: &str) -> Result<CoreLabels, ProviderError> {
        self.0.get("prediction", &prediction_digest(task, rationale))
    }
}
