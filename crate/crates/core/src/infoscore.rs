//! Pairwise contributions, InfoScores and in-context feature vectors.
//!
//! `c(e, e') = p(y' | e, x') - p(y' | x')` is the gain in the gold-label
//! probability of `e'` when `e` is prepended as the only demonstration.
//! An example's InfoScore over a score set is the sum of its contributions
//! to every other member; its feature vector lists those contributions in
//! score-set order.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::domain::{render_context, Dataset, ExampleId, PromptTemplate};
use crate::error::{Error, Result};
use crate::scoring::{Scorer, ScorerRequest};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub candidate_id: ExampleId,
    pub score_id: ExampleId,
    pub value: f64,
}

/// Every contribution computed during a run, keyed by `(candidate, score example)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContributionMatrix {
    values: BTreeMap<(ExampleId, ExampleId), f64>,
}

impl ContributionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, c: Contribution) {
        self.values.insert((c.candidate_id, c.score_id), c.value);
    }

    pub fn get(&self, candidate: ExampleId, score: ExampleId) -> Option<f64> {
        self.values.get(&(candidate, score)).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Entries ordered by candidate id, then score id.
    pub fn iter(&self) -> impl Iterator<Item = Contribution> + '_ {
        self.values.iter().map(|(&(c, s), &value)| Contribution {
            candidate_id: c,
            score_id: s,
            value,
        })
    }

    /// Writes `contributions.jsonl`, one `{candidate_id, score_id, value}` per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ctx = || format!("writing {}", path.display());
        let file = File::create(path).map_err(|e| Error::io(ctx(), e))?;
        let mut w = BufWriter::new(file);
        for c in self.iter() {
            let line = serde_json::to_string(&c).map_err(|e| Error::json(ctx(), e))?;
            writeln!(w, "{line}").map_err(|e| Error::io(ctx(), e))?;
        }
        w.flush().map_err(|e| Error::io(ctx(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let ctx = || format!("reading {}", path.display());
        let reader = BufReader::new(File::open(path).map_err(|e| Error::io(ctx(), e))?);
        let mut m = ContributionMatrix::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io(ctx(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            m.insert(serde_json::from_str(&line).map_err(|e| Error::json(ctx(), e))?);
        }
        Ok(m)
    }
}

/// Computes contributions through a scorer, memoizing zero-demo
/// probabilities so each score example's `p(y' | x')` is requested once.
pub struct InfoScorer<'a> {
    dataset: &'a Dataset,
    template: &'a PromptTemplate,
    scorer: &'a Scorer,
    zero_shot: Mutex<HashMap<ExampleId, f64>>,
}

impl<'a> InfoScorer<'a> {
    pub fn new(dataset: &'a Dataset, template: &'a PromptTemplate, scorer: &'a Scorer) -> Self {
        InfoScorer {
            dataset,
            template,
            scorer,
            zero_shot: Mutex::new(HashMap::new()),
        }
    }

    pub fn scorer(&self) -> &Scorer {
        self.scorer
    }

    fn request(&self, demo: Option<ExampleId>, test: ExampleId) -> Result<ScorerRequest> {
        let demos = match demo {
            Some(d) => vec![self.dataset.get(d)?],
            None => Vec::new(),
        };
        let test = self.dataset.get(test)?;
        let context = render_context(self.template, &demos, Some(&test.text))?;
        Ok(ScorerRequest::new(context, self.template.completions())?)
    }

    /// Gold-label zero-demo probabilities for `ids`, fetching missing ones in one batch.
    pub fn zero_shot(&self, ids: &[ExampleId]) -> Result<Vec<f64>> {
        let missing: Vec<ExampleId> = {
            let memo = self.zero_shot.lock().unwrap();
            let mut seen = std::collections::HashSet::new();
            ids.iter()
                .copied()
                .filter(|id| !memo.contains_key(id) && seen.insert(*id))
                .collect()
        };
        if !missing.is_empty() {
            let requests = missing
                .iter()
                .map(|&id| self.request(None, id))
                .collect::<Result<Vec<_>>>()?;
            let probs = self.scorer.score_batch(&requests)?;
            let mut memo = self.zero_shot.lock().unwrap();
            for (id, p) in missing.iter().zip(probs) {
                let gold = self.dataset.get(*id)?.label;
                memo.insert(*id, p.probs[gold]);
            }
        }
        let memo = self.zero_shot.lock().unwrap();
        Ok(ids.iter().map(|id| memo[id]).collect())
    }

    /// `c(e, e')`; `e` and `e'` must differ.
    pub fn contribution(&self, e: ExampleId, e_prime: ExampleId) -> Result<Contribution> {
        Ok(self.contributions(&[(e, e_prime)])?[0])
    }

    /// Batched contributions, returned in input order.
    pub fn contributions(&self, pairs: &[(ExampleId, ExampleId)]) -> Result<Vec<Contribution>> {
        if let Some((e, _)) = pairs.iter().find(|(e, s)| e == s) {
            return Err(Error::Consistency(format!(
                "contribution of example {e} to itself is undefined"
            )));
        }
        let score_ids: Vec<ExampleId> = pairs.iter().map(|&(_, s)| s).collect();
        let zero = self.zero_shot(&score_ids)?;
        let requests = pairs
            .iter()
            .map(|&(e, s)| self.request(Some(e), s))
            .collect::<Result<Vec<_>>>()?;
        let probs = self.scorer.score_batch(&requests)?;
        pairs
            .iter()
            .zip(probs)
            .zip(zero)
            .map(|((&(e, s), p), p0)| {
                let gold = self.dataset.get(s)?.label;
                Ok(Contribution {
                    candidate_id: e,
                    score_id: s,
                    value: p.probs[gold] - p0,
                })
            })
            .collect()
    }

    /// `I(e, S) = sum of c(e, e')` over `e' in S`, skipping `e' = e`,
    /// summed in score-set order.
    pub fn infoscore(&self, e: ExampleId, score_set: &[ExampleId]) -> Result<f64> {
        let pairs: Vec<_> = score_set
            .iter()
            .filter(|&&s| s != e)
            .map(|&s| (e, s))
            .collect();
        Ok(self
            .contributions(&pairs)?
            .iter()
            .fold(0.0, |acc, c| acc + c.value))
    }
}

/// `f(e)`: contributions of `e` over the final score set, in score-set order.
///
/// When `e` is itself a score-set member its slot is omitted and recorded
/// in `self_slot`; [`FeatureVector::padded`] restores it as `0.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub candidate_id: ExampleId,
    pub values: Vec<f64>,
    pub self_slot: Option<usize>,
}

impl FeatureVector {
    /// Values with the omitted self slot filled with zero.
    pub fn padded(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        if let Some(slot) = self.self_slot {
            v.insert(slot, 0.0);
        }
        v
    }

    /// Sum of the values, left to right.
    pub fn total(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc + v)
    }
}

/// Assembles `f(e)` from cached contributions; never calls the scorer.
pub fn feature_vector(
    e: ExampleId,
    score_set: &[ExampleId],
    matrix: &ContributionMatrix,
) -> Result<FeatureVector> {
    let mut values = Vec::with_capacity(score_set.len());
    let mut self_slot = None;
    for (j, &s) in score_set.iter().enumerate() {
        if s == e {
            self_slot = Some(j);
            continue;
        }
        let v = matrix
            .get(e, s)
            .ok_or_else(|| Error::Consistency(format!("no cached contribution for ({e}, {s})")))?;
        values.push(v);
    }
    Ok(FeatureVector {
        candidate_id: e,
        values,
        self_slot,
    })
}

/// Cosine similarity of two equal-length vectors; zero if either has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine similarity of two feature vectors after padding self slots.
pub fn similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    cosine(&a.padded(), &b.padded())
}
