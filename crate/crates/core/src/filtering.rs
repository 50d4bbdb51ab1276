//! Progressive example filtering.
//!
//! Each round scores the surviving candidates against the score-set members
//! added since the previous round, adds the result to each candidate's
//! running InfoScore, keeps the top `1/rho` (or the top `m` once that would
//! undershoot), then grows the score set by a factor of `rho`. Per-round work
//! stays close to `N * l` pair evaluations.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, ExampleId, LabelId, PromptTemplate};
use crate::error::{Error, Result};
use crate::infoscore::{ContributionMatrix, InfoScorer};
use crate::scoring::Scorer;

/// Default budget of scored pairs used to size the initial score set.
pub const DEFAULT_PAIR_BUDGET: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Number of candidates to keep.
    pub m: usize,
    /// Shrink factor of the candidate pool and growth factor of the score set.
    pub rho: f64,
    /// Initial score-set size.
    pub l: usize,
    pub seed: u64,
    pub label_balance: bool,
    /// Keep the lowest InfoScores instead of the highest (ablation only).
    #[serde(default)]
    pub invert: bool,
}

impl FilterConfig {
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        let n = dataset.len();
        if self.m < 1 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.m >= n {
            return Err(Error::Config(format!(
                "m = {} must be below |D| = {n}",
                self.m
            )));
        }
        if self.rho.is_nan() || self.rho <= 1.0 || self.rho.is_infinite() {
            return Err(Error::Config(format!("rho = {} must exceed 1", self.rho)));
        }
        if self.l < 1 {
            return Err(Error::Config("l must be at least 1".into()));
        }
        if self.l > n {
            return Err(Error::Schedule(format!(
                "initial score set l = {} exceeds |D| = {n}; use a smaller l",
                self.l
            )));
        }
        if self.label_balance {
            let k = dataset.num_labels();
            if !self.m.is_multiple_of(k) {
                return Err(Error::Config(format!(
                    "label balance needs m = {} divisible by {k} labels",
                    self.m
                )));
            }
            let quota = self.m / k;
            for (label, count) in dataset.label_counts().into_iter().enumerate() {
                if count < quota {
                    return Err(Error::Infeasible(format!(
                        "label {label} has {count} examples, quota is {quota}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Progressive factor, initial score-set size and expected round count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub rho: f64,
    pub l: usize,
    pub iterations: usize,
}

/// Number of filtering rounds needed to shrink `n` candidates to `m`.
pub fn filter_iterations(n: usize, m: usize, rho: f64) -> usize {
    if n <= m {
        return 0;
    }
    let ratio = n as f64 / m as f64;
    // Round before ceil so exact powers (e.g. 256/16 with rho 2) are not bumped.
    let raw = ratio.ln() / rho.ln();
    let rounded = (raw * 1e9).round() / 1e9;
    (rounded.ceil() as usize).max(1)
}

/// Picks `rho` and `l` for a dataset of `n` examples filtered to `m`.
///
/// `rho` is `(n/m)^(1/c)` rounded to an integer and clamped to `[2, 3]`, so
/// that about `c` rounds are needed; `l` is the largest size whose
/// `n * l * rounds` stays within `pair_budget` (at least 1) and whose score
/// set still fits in the dataset after the last round's growth.
pub fn default_schedule(n: usize, m: usize, c: u32, pair_budget: u64) -> Schedule {
    let ratio = (n.max(2) as f64 / m.max(1) as f64).max(1.0);
    let rho = ratio.powf(1.0 / c.max(1) as f64).round().clamp(2.0, 3.0);
    let iterations = filter_iterations(n, m, rho).max(1);
    let per_unit = (n as u64) * iterations as u64;
    let mut l = ((pair_budget / per_unit.max(1)) as usize).clamp(1, n.max(1));
    // The score set grows every round but the last and must stay within `n`.
    while l > 1 && final_score_set(l, rho, iterations) > n {
        l -= 1;
    }
    Schedule { rho, l, iterations }
}

fn final_score_set(l: usize, rho: f64, iterations: usize) -> usize {
    (1..iterations).fold(l, |s, _| (s as f64 * rho).ceil() as usize)
}

/// Ordered score examples with the round at which each was added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub members: Vec<ExampleId>,
    pub generation: Vec<usize>,
}

impl ScoreSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn extend(&mut self, ids: impl IntoIterator<Item = ExampleId>, generation: usize) {
        for id in ids {
            self.members.push(id);
            self.generation.push(generation);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRound {
    pub iteration: usize,
    pub candidates_in: usize,
    pub candidates_out: usize,
    pub score_set_size: usize,
    pub new_score_members: usize,
    pub pairs_scored: usize,
    pub scorer_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub id: ExampleId,
    pub label: LabelId,
    pub infoscore: f64,
}

/// Contents of `filter_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub schema: String,
    pub config: FilterConfig,
    pub dataset_size: usize,
    pub rounds: Vec<FilterRound>,
    pub score_set: ScoreSet,
    /// Survivors in rank order.
    pub candidates: Vec<CandidateScore>,
    pub scorer_calls: u64,
}

pub const FILTER_REPORT_SCHEMA: &str = "lens.filter_report/v1";

impl FilterReport {
    pub fn candidate_ids(&self) -> Vec<ExampleId> {
        self.candidates.iter().map(|c| c.id).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::run::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::run::read_json(path)
    }
}

pub struct FilterOutcome {
    pub candidates: Vec<ExampleId>,
    pub score_set: ScoreSet,
    pub matrix: ContributionMatrix,
    pub report: FilterReport,
}

/// Ranks `pool` by score (descending, or ascending when inverted), ties
/// going to the lower id.
fn rank(pool: &[ExampleId], totals: &HashMap<ExampleId, f64>, invert: bool) -> Vec<ExampleId> {
    let mut ranked = pool.to_vec();
    ranked.sort_by(|a, b| {
        let (sa, sb) = (totals[a], totals[b]);
        let ord = if invert {
            sa.total_cmp(&sb)
        } else {
            sb.total_cmp(&sa)
        };
        ord.then(a.cmp(b))
    });
    ranked
}

/// Keeps the best `k` of `pool`, per label with equal quotas when balancing.
fn top_k(
    pool: &[ExampleId],
    k: usize,
    totals: &HashMap<ExampleId, f64>,
    dataset: &Dataset,
    cfg: &FilterConfig,
) -> Result<Vec<ExampleId>> {
    let ranked = rank(pool, totals, cfg.invert);
    if !cfg.label_balance {
        return Ok(ranked.into_iter().take(k).collect());
    }
    let n_labels = dataset.num_labels();
    let quota = k.div_ceil(n_labels).max(cfg.m / n_labels);
    let mut taken = vec![0usize; n_labels];
    let mut kept = Vec::with_capacity(k);
    for id in ranked {
        let label = dataset.get(id)?.label;
        if taken[label] < quota {
            taken[label] += 1;
            kept.push(id);
        }
    }
    // Keep rank order across labels.
    Ok(kept)
}

/// Filters `dataset` down to `cfg.m` individually informative candidates.
pub fn progressive_filter(
    dataset: &Dataset,
    cfg: &FilterConfig,
    template: &PromptTemplate,
    scorer: &Scorer,
) -> Result<FilterOutcome> {
    cfg.validate(dataset)?;
    let n = dataset.len();
    let calls_at_start = scorer.backend_calls();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let info = InfoScorer::new(dataset, template, scorer);

    let mut score_set = ScoreSet {
        members: Vec::new(),
        generation: Vec::new(),
    };
    score_set.extend(
        index::sample(&mut rng, n, cfg.l).into_iter().map(ExampleId),
        0,
    );
    let mut survivors: Vec<ExampleId> = dataset.ids().collect();
    let mut totals: HashMap<ExampleId, f64> = survivors.iter().map(|&id| (id, 0.0)).collect();
    let mut matrix = ContributionMatrix::new();
    let mut rounds = Vec::new();
    let mut scored_upto = 0;
    let mut iteration = 0;

    while survivors.len() > cfg.m {
        let calls_before = scorer.backend_calls();
        let fresh: Vec<ExampleId> = score_set.members[scored_upto..].to_vec();
        scored_upto = score_set.len();

        let pairs: Vec<(ExampleId, ExampleId)> = survivors
            .iter()
            .flat_map(|&e| fresh.iter().filter(move |&&s| s != e).map(move |&s| (e, s)))
            .collect();
        let contributions = info.contributions(&pairs)?;
        // Pairs are grouped by candidate and ordered like the score set, so
        // each running total is a left fold in score-set order.
        for c in &contributions {
            *totals.get_mut(&c.candidate_id).unwrap() += c.value;
            matrix.insert(*c);
        }

        let before = survivors.len();
        let last = (before as f64) / cfg.rho < cfg.m as f64;
        let keep = if last {
            cfg.m
        } else {
            ((before as f64 / cfg.rho).ceil() as usize).clamp(cfg.m, before - 1)
        };
        survivors = top_k(&survivors, keep, &totals, dataset, cfg)?;

        rounds.push(FilterRound {
            iteration,
            candidates_in: before,
            candidates_out: survivors.len(),
            score_set_size: score_set.len(),
            new_score_members: fresh.len(),
            pairs_scored: pairs.len(),
            scorer_calls: scorer.backend_calls() - calls_before,
        });
        iteration += 1;

        if last || survivors.len() <= cfg.m {
            break;
        }
        let target = (score_set.len() as f64 * cfg.rho).ceil() as usize;
        if target > n {
            return Err(Error::Schedule(format!(
                "round {iteration} needs a score set of {target} but |D| = {n}; use a smaller l or rho"
            )));
        }
        let in_set: std::collections::HashSet<ExampleId> =
            score_set.members.iter().copied().collect();
        let outside: Vec<ExampleId> = dataset.ids().filter(|id| !in_set.contains(id)).collect();
        let added = index::sample(&mut rng, outside.len(), target - score_set.len())
            .into_iter()
            .map(|i| outside[i]);
        score_set.extend(added, iteration);
    }

    let candidates = rank(&survivors, &totals, cfg.invert);
    let final_set = ScoreSet {
        members: score_set.members[..scored_upto].to_vec(),
        generation: score_set.generation[..scored_upto].to_vec(),
    };
    let report = FilterReport {
        schema: FILTER_REPORT_SCHEMA.into(),
        config: cfg.clone(),
        dataset_size: n,
        rounds,
        score_set: final_set.clone(),
        candidates: candidates
            .iter()
            .map(|&id| {
                Ok(CandidateScore {
                    id,
                    label: dataset.get(id)?.label,
                    infoscore: totals[&id],
                })
            })
            .collect::<Result<Vec<_>>>()?,
        scorer_calls: scorer.backend_calls() - calls_at_start,
    };
    Ok(FilterOutcome {
        candidates,
        score_set: final_set,
        matrix,
        report,
    })
}
