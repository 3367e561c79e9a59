//! Failure explainer: retrieves advice for a failed skill from a dataset of
//! past failures.
//!
//! Records are filtered exactly on skill and error code, then ranked by the
//! cosine similarity between the current request and the recorded request.
//! Requests are embedded with a feature-hashed bag of words so retrieval is
//! bit-reproducible without a model.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::execution::FailureMessage;

pub const EMBEDDING_DIM: usize = 256;
pub const DEFAULT_THRESHOLD: f64 = 0.35;

const SEED_DATASET: &str = include_str!("../assets/explainer_seed.jsonl");

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, b| {
        (hash ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

/// Either the zero vector or a unit-norm vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding([f64; EMBEDDING_DIM]);

impl Embedding {
    pub fn zero() -> Self {
        Self([0.0; EMBEDDING_DIM])
    }

    /// L2-normalizes the components; an all-zero input stays zero.
    pub fn normalized(mut components: [f64; EMBEDDING_DIM]) -> Self {
        let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            components.iter_mut().for_each(|c| *c /= norm);
        }
        Self(components)
    }

    pub fn components(&self) -> &[f64; EMBEDDING_DIM] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|c| *c == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Little-endian IEEE-754 bytes of every component.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.iter().flat_map(|c| c.to_le_bytes()).collect()
    }
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Lowercased alphanumeric tokens, hashed with FNV-1a into 256 count buckets.
pub fn embed(text: &str) -> Embedding {
    let mut counts = [0.0; EMBEDDING_DIM];
    for token in tokenize(text) {
        let bucket = (fnv1a64(token.as_bytes()) % EMBEDDING_DIM as u64) as usize;
        counts[bucket] += 1.0;
    }
    Embedding::normalized(counts)
}

/// Cosine similarity; anything against a zero vector is 0.
pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.0.iter().zip(b.0.iter()).map(|(x, y)| x * y).sum();
    dot / (na * nb)
}

/// Request representation used for retrieval. The hashing embedder is the
/// default; other representations can be plugged in behind this trait.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Embedding;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HashingEmbedder;

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> Embedding {
        embed(text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureRecord {
    pub id: String,
    pub skill: String,
    pub user_request: String,
    pub error_code: String,
    pub failure_reason: String,
    pub suggestion: String,
}

#[derive(Debug, Error)]
pub enum ExplainerError {
    #[error("DATASET_INVALID: line {line}: {message}")]
    DatasetInvalid { line: usize, message: String },
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    records: Vec<FailureRecord>,
}

impl Dataset {
    pub fn new(records: Vec<FailureRecord>) -> Self {
        Self { records }
    }

    /// The dataset shipped with the crate.
    pub fn seed() -> Self {
        Self::from_jsonl(SEED_DATASET).expect("embedded seed dataset is valid")
    }

    pub fn load(path: &Path) -> Result<Self, ExplainerError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExplainerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_jsonl(&text)
    }

    /// One JSON record per line; blank lines are skipped. Every field must be
    /// present and non-empty, and ids must be unique.
    pub fn from_jsonl(text: &str) -> Result<Self, ExplainerError> {
        let mut records: Vec<FailureRecord> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let invalid = |message: String| ExplainerError::DatasetInvalid {
                line: line_no,
                message,
            };
            let record: FailureRecord =
                serde_json::from_str(line).map_err(|e| invalid(e.to_string()))?;
            let fields = [
                ("id", &record.id),
                ("skill", &record.skill),
                ("user_request", &record.user_request),
                ("error_code", &record.error_code),
                ("failure_reason", &record.failure_reason),
                ("suggestion", &record.suggestion),
            ];
            if let Some((name, _)) = fields.iter().find(|(_, v)| v.trim().is_empty()) {
                return Err(invalid(format!("field '{name}' is empty")));
            }
            if records.iter().any(|r| r.id == record.id) {
                return Err(invalid(format!("duplicate id '{}'", record.id)));
            }
            records.push(record);
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[FailureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<'a> {
    pub record: &'a FailureRecord,
    pub similarity: f64,
}

/// Records matching `skill` and `error_code` exactly, most similar request
/// first; equal similarities fall back to the smaller id.
pub fn retrieve<'a>(
    skill: &str,
    error_code: &str,
    request: &str,
    dataset: &'a Dataset,
) -> Vec<Candidate<'a>> {
    retrieve_with(&HashingEmbedder, skill, error_code, request, dataset)
}

pub fn retrieve_with<'a>(
    embedder: &dyn Embedder,
    skill: &str,
    error_code: &str,
    request: &str,
    dataset: &'a Dataset,
) -> Vec<Candidate<'a>> {
    let query = embedder.embed(request);
    let mut out: Vec<Candidate<'a>> = dataset
        .records
        .iter()
        .filter(|r| r.skill == skill && r.error_code == error_code)
        .map(|record| Candidate {
            record,
            similarity: cosine(&query, &embedder.embed(&record.user_request)),
        })
        .collect();
    out.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.record.id.cmp(&b.record.id))
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub text: String,
    pub matched_record: String,
    pub similarity: f64,
}

#[derive(Clone)]
pub struct Explainer {
    dataset: Dataset,
    threshold: f64,
    embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for Explainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Explainer")
            .field("records", &self.dataset.len())
            .field("threshold", &self.threshold)
            .finish()
    }
}

impl Default for Explainer {
    fn default() -> Self {
        Self::new(Dataset::seed())
    }
}

impl Explainer {
    pub fn new(dataset: Dataset) -> Self {
        Self {
            dataset,
            threshold: DEFAULT_THRESHOLD,
            embedder: Arc::new(HashingEmbedder),
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_embedder(mut self, embedder: Arc<dyn Embedder>) -> Self {
        self.embedder = embedder;
        self
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// `s_g`: the best candidate's advice, if it is similar enough.
    pub fn suggest(&self, failure: &FailureMessage, request: &str) -> Option<Suggestion> {
        let best = retrieve_with(
            self.embedder.as_ref(),
            failure.skill.as_str(),
            failure.error_code.as_str(),
            request,
            &self.dataset,
        )
        .into_iter()
        .next()?;
        (best.similarity >= self.threshold).then(|| Suggestion {
            text: best.record.suggestion.clone(),
            matched_record: best.record.id.clone(),
            similarity: best.similarity,
        })
    }
}
