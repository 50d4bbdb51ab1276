//! Conditional label-probability oracle.
//!
//! A [`Scorer`] wraps a [`ScoreBackend`] with a content-addressed cache and a
//! counter of backend invocations. Every probability the pipeline consumes is
//! obtained through [`Scorer::score`] or [`Scorer::score_batch`].

mod cache;
pub mod remote;
pub mod stub;
pub mod synthetic;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cache::{cache_key, ScoreCache};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("scorer unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },

    #[error("transport: {0}")]
    Transport(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("invalid request: {0}")]
    Request(String),

    #[error("planted model: {0}")]
    Planted(String),

    #[error("score cache: {0}")]
    Cache(String),
}

impl ScoreError {
    pub fn kind(&self) -> &'static str {
        match self {
            ScoreError::Unavailable { .. } => "scorer_unavailable",
            ScoreError::Transport(_) => "scorer_transport",
            ScoreError::Protocol(_) => "scorer_protocol",
            ScoreError::Request(_) => "scorer_request",
            ScoreError::Planted(_) => "planted_model",
            ScoreError::Cache(_) => "score_cache",
        }
    }
}

/// One context scored against every label's completion string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScorerRequest {
    pub context: String,
    pub completions: Vec<String>,
}

impl ScorerRequest {
    pub fn new(context: String, completions: Vec<String>) -> Result<Self, ScoreError> {
        if completions.is_empty() {
            return Err(ScoreError::Request("no completions".into()));
        }
        for (i, c) in completions.iter().enumerate() {
            if completions[..i].contains(c) {
                return Err(ScoreError::Request(format!("duplicate completion {c:?}")));
            }
        }
        Ok(ScorerRequest {
            context,
            completions,
        })
    }
}

/// Per-label sequence probabilities, aligned with the request's completions.
/// They are not renormalized and need not sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelProbabilities {
    pub probs: Vec<f64>,
}

impl LabelProbabilities {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest label id.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A source of completion log-probabilities.
///
/// Implementations return, for each completion, the natural-log probability
/// of the whole completion given the context (the sum over its tokens).
pub trait ScoreBackend: Send + Sync {
    /// Stable identifier folded into cache keys.
    fn id(&self) -> String;

    fn logprobs(&self, context: &str, completions: &[String]) -> Result<Vec<f64>, ScoreError>;
}

/// Cached, counted access to a backend.
pub struct Scorer {
    backend: Arc<dyn ScoreBackend>,
    backend_id: String,
    cache: ScoreCache,
    calls: AtomicU64,
    pool: rayon::ThreadPool,
}

impl Scorer {
    /// Scorer with an in-memory cache and `workers` concurrent requests.
    pub fn new(backend: Arc<dyn ScoreBackend>, workers: usize) -> Self {
        Self::with_cache(backend, ScoreCache::in_memory(), workers)
    }

    /// Scorer whose cache is persisted to `path` (JSONL, append-only).
    pub fn persistent(
        backend: Arc<dyn ScoreBackend>,
        path: &Path,
        workers: usize,
    ) -> Result<Self, ScoreError> {
        Ok(Self::with_cache(backend, ScoreCache::open(path)?, workers))
    }

    pub fn with_cache(backend: Arc<dyn ScoreBackend>, cache: ScoreCache, workers: usize) -> Self {
        let backend_id = backend.id();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .thread_name(|i| format!("lens-scorer-{i}"))
            .build()
            .expect("failed to build scorer thread pool");
        Scorer {
            backend,
            backend_id,
            cache,
            calls: AtomicU64::new(0),
            pool,
        }
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    /// Number of requests that reached the backend (cache misses).
    pub fn backend_calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> &ScoreCache {
        &self.cache
    }

    pub fn score(&self, request: &ScorerRequest) -> Result<LabelProbabilities, ScoreError> {
        let keys: Vec<String> = request
            .completions
            .iter()
            .map(|c| cache_key(&self.backend_id, &request.context, c))
            .collect();
        if let Some(logprobs) = self.cache.get_all(&keys) {
            return to_probabilities(&logprobs);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let logprobs = self
            .backend
            .logprobs(&request.context, &request.completions)?;
        if logprobs.len() != request.completions.len() {
            return Err(ScoreError::Protocol(format!(
                "{} log-probabilities for {} completions",
                logprobs.len(),
                request.completions.len()
            )));
        }
        let probs = to_probabilities(&logprobs)?;
        self.cache.insert_all(keys.into_iter().zip(logprobs))?;
        Ok(probs)
    }

    /// Scores requests concurrently; results come back in request order.
    /// Identical requests inside one batch reach the backend once.
    pub fn score_batch(
        &self,
        requests: &[ScorerRequest],
    ) -> Result<Vec<LabelProbabilities>, ScoreError> {
        let mut unique: Vec<&ScorerRequest> = Vec::new();
        let mut slot_of: HashMap<&ScorerRequest, usize> = HashMap::new();
        let slots: Vec<usize> = requests
            .iter()
            .map(|r| {
                *slot_of.entry(r).or_insert_with(|| {
                    unique.push(r);
                    unique.len() - 1
                })
            })
            .collect();
        let results: Vec<Result<LabelProbabilities, ScoreError>> = self
            .pool
            .install(|| unique.par_iter().map(|r| self.score(r)).collect());
        self.cache.flush()?;
        let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok(slots.into_iter().map(|s| results[s].clone()).collect())
    }
}

fn to_probabilities(logprobs: &[f64]) -> Result<LabelProbabilities, ScoreError> {
    let probs = logprobs
        .iter()
        .map(|&lp| {
            if lp.is_nan() || lp > 0.0 {
                Err(ScoreError::Protocol(format!(
                    "log-probability {lp} is not a valid probability"
                )))
            } else {
                Ok(lp.exp())
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabelProbabilities { probs })
}
