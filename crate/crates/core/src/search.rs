//! Diversity-guided beam search over demonstration permutations.
//!
//! Candidates come from the filtering stage together with their cached
//! contributions. Move generation (substitution and shuffling) only reads
//! that cache; the scorer is touched solely to measure validation accuracy.
//!
//! The diversity-guided score of a candidate `e` against a partial
//! permutation `E'` is
//!
//! ```text
//! s(e, E') = I(e, S) - lambda * sum_{e' in E'} cos(f(e), f(e'))
//! ```

use std::collections::{HashMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Example, ExampleId, LabelId, Permutation, PromptTemplate};
use crate::error::{Error, Result};
use crate::eval::{Calibration, Predictor};
use crate::infoscore::{cosine, feature_vector, ContributionMatrix, FeatureVector};
use crate::scoring::Scorer;

/// Stream offsets so the search and validation sampling do not share the
/// filtering stage's random sequence.
const SEARCH_STREAM: u64 = 0x5ea4_c4b0_0000_0001;
const VALIDATION_STREAM: u64 = 0x5ea4_c4b0_0000_0002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub n_demos: usize,
    pub beam: usize,
    /// Substitution children per beam member; the rest are shuffles.
    pub subst: usize,
    pub iterations: usize,
    pub lambda: f64,
    pub valid_size: usize,
    pub seed: u64,
    pub label_balance: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            n_demos: 8,
            beam: 8,
            subst: 4,
            iterations: 10,
            lambda: 1.0,
            valid_size: 100,
            seed: 0,
            label_balance: true,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self, n_labels: usize) -> Result<()> {
        if self.n_demos == 0 {
            return Err(Error::Config("n_demos must be at least 1".into()));
        }
        if self.beam == 0 || self.subst == 0 || self.subst > self.beam {
            return Err(Error::Config(format!(
                "need 1 <= subst ({}) <= beam ({})",
                self.subst, self.beam
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.valid_size == 0 {
            return Err(Error::Config("valid_size must be at least 1".into()));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 || self.lambda.is_infinite() {
            return Err(Error::Config(format!(
                "lambda = {} must be >= 0",
                self.lambda
            )));
        }
        if self.label_balance && !self.n_demos.is_multiple_of(n_labels) {
            return Err(Error::Config(format!(
                "label balance needs n_demos = {} divisible by {n_labels} labels",
                self.n_demos
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Init,
    Substitution,
    Shuffle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPermutation {
    pub permutation: Permutation,
    pub valid_accuracy: f64,
    pub provenance: Provenance,
    /// Creation order across the whole search; earlier wins ties.
    pub created: usize,
}

/// Candidate pool with InfoScores, feature vectors and pairwise similarities
/// precomputed from the contribution cache.
pub struct SearchSpace {
    ids: Vec<ExampleId>,
    labels: Vec<LabelId>,
    infoscores: Vec<f64>,
    features: Vec<FeatureVector>,
    sims: Vec<f64>,
    index: HashMap<ExampleId, usize>,
    n_labels: usize,
}

impl SearchSpace {
    pub fn build(
        dataset: &Dataset,
        candidates: &[ExampleId],
        score_set: &[ExampleId],
        matrix: &ContributionMatrix,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        if let Some(dup) = candidates.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::Config(format!("duplicate candidate {dup}")));
        }
        let features = candidates
            .iter()
            .map(|&id| feature_vector(id, score_set, matrix))
            .collect::<Result<Vec<_>>>()?;
        let padded: Vec<Vec<f64>> = features.iter().map(FeatureVector::padded).collect();
        let m = candidates.len();
        let mut sims = vec![0.0; m * m];
        for i in 0..m {
            for j in i..m {
                let s = cosine(&padded[i], &padded[j])?;
                sims[i * m + j] = s;
                sims[j * m + i] = s;
            }
        }
        Ok(SearchSpace {
            ids: candidates.to_vec(),
            labels: candidates
                .iter()
                .map(|&id| Ok(dataset.get(id)?.label))
                .collect::<Result<Vec<_>>>()?,
            infoscores: features.iter().map(FeatureVector::total).collect(),
            features,
            sims,
            index: candidates
                .iter()
                .enumerate()
                .map(|(i, &id)| (id, i))
                .collect(),
            n_labels: dataset.num_labels(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[ExampleId] {
        &self.ids
    }

    fn slot(&self, id: ExampleId) -> Result<usize> {
        self.index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::Consistency(format!("example {id} is not a search candidate")))
    }

    pub fn label(&self, id: ExampleId) -> Result<LabelId> {
        Ok(self.labels[self.slot(id)?])
    }

    /// `I(e, S_final)`, summed from the cached feature vector.
    pub fn infoscore(&self, id: ExampleId) -> Result<f64> {
        Ok(self.infoscores[self.slot(id)?])
    }

    pub fn feature(&self, id: ExampleId) -> Result<&FeatureVector> {
        Ok(&self.features[self.slot(id)?])
    }

    pub fn similarity(&self, a: ExampleId, b: ExampleId) -> Result<f64> {
        let (i, j) = (self.slot(a)?, self.slot(b)?);
        Ok(self.sims[i * self.len() + j])
    }

    fn score_slot(&self, i: usize, others: &[usize], lambda: f64) -> f64 {
        let m = self.len();
        let penalty = others
            .iter()
            .fold(0.0, |acc, &j| acc + self.sims[i * m + j]);
        self.infoscores[i] - lambda * penalty
    }

    /// `s(e, E')` for a candidate against other candidates.
    pub fn diversity_score(&self, e: ExampleId, others: &[ExampleId], lambda: f64) -> Result<f64> {
        let i = self.slot(e)?;
        let others = others
            .iter()
            .map(|&o| self.slot(o))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.score_slot(i, &others, lambda))
    }

    /// `sum_{e in E} s(e, E - e)`.
    pub fn objective(&self, set: &[ExampleId], lambda: f64) -> Result<f64> {
        let slots = set
            .iter()
            .map(|&o| self.slot(o))
            .collect::<Result<Vec<_>>>()?;
        Ok(objective_slots(self, &slots, lambda))
    }

    /// Candidate slots ordered by InfoScore (descending), ties to the lower id.
    fn by_infoscore(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.infoscores[b]
                .total_cmp(&self.infoscores[a])
                .then(self.ids[a].cmp(&self.ids[b]))
        });
        order
    }
}

fn objective_slots(space: &SearchSpace, slots: &[usize], lambda: f64) -> f64 {
    let mut total = 0.0;
    for (k, &i) in slots.iter().enumerate() {
        let others: Vec<usize> = slots
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != k)
            .map(|(_, &s)| s)
            .collect();
        total += space.score_slot(i, &others, lambda);
    }
    total
}

/// `s(e, E')` computed directly from the contribution cache.
pub fn diversity_score(
    e: ExampleId,
    e_minus: &[ExampleId],
    score_set: &[ExampleId],
    matrix: &ContributionMatrix,
    lambda: f64,
) -> Result<f64> {
    if e_minus.contains(&e) {
        return Err(Error::Consistency(format!("example {e} is already in E'")));
    }
    let fe = feature_vector(e, score_set, matrix)?;
    let mut penalty = 0.0;
    for &other in e_minus {
        let fo = feature_vector(other, score_set, matrix)?;
        penalty += cosine(&fe.padded(), &fo.padded())?;
    }
    Ok(fe.total() - lambda * penalty)
}

fn quotas(space: &SearchSpace, cfg: &SearchConfig) -> Result<Option<Vec<usize>>> {
    if !cfg.label_balance {
        return Ok(None);
    }
    let quota = cfg.n_demos / space.n_labels;
    let mut available = vec![0usize; space.n_labels];
    for &l in &space.labels {
        available[l] += 1;
    }
    if let Some((label, &have)) = available.iter().enumerate().find(|(_, &c)| c < quota) {
        return Err(Error::Infeasible(format!(
            "label {label} has {have} candidates, {quota} required"
        )));
    }
    Ok(Some(vec![quota; space.n_labels]))
}

/// Greedy construction from a forced first element, then best-improvement
/// single swaps until no swap raises the objective.
fn greedy_local_search(
    space: &SearchSpace,
    first: usize,
    cfg: &SearchConfig,
    quota: Option<&[usize]>,
) -> Result<Vec<usize>> {
    let mut chosen = vec![first];
    let mut used = vec![0usize; space.n_labels];
    used[space.labels[first]] += 1;
    while chosen.len() < cfg.n_demos {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..space.len() {
            if chosen.contains(&i) {
                continue;
            }
            if let Some(q) = quota {
                if used[space.labels[i]] >= q[space.labels[i]] {
                    continue;
                }
            }
            let s = space.score_slot(i, &chosen, cfg.lambda);
            let better = match best {
                None => true,
                Some((b, bs)) => s > bs || (s == bs && space.ids[i] < space.ids[b]),
            };
            if better {
                best = Some((i, s));
            }
        }
        let (pick, _) = best.ok_or_else(|| {
            Error::Infeasible(format!(
                "ran out of candidates after {} of {} demonstrations",
                chosen.len(),
                cfg.n_demos
            ))
        })?;
        used[space.labels[pick]] += 1;
        chosen.push(pick);
    }

    let mut current = objective_slots(space, &chosen, cfg.lambda);
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for pos in 0..chosen.len() {
            for c in 0..space.len() {
                if chosen.contains(&c) {
                    continue;
                }
                if quota.is_some() && space.labels[c] != space.labels[chosen[pos]] {
                    continue;
                }
                let mut trial = chosen.clone();
                trial[pos] = c;
                let value = objective_slots(space, &trial, cfg.lambda);
                if best.is_none_or(|(_, _, v)| value > v) {
                    best = Some((pos, c, value));
                }
            }
        }
        match best {
            Some((pos, c, value)) if value > current + 1e-12 * current.abs().max(1.0) => {
                chosen[pos] = c;
                current = value;
            }
            _ => break,
        }
    }
    Ok(chosen)
}

/// Builds `cfg.beam` initial permutations.
///
/// Permutation `b` starts from the `b`-th best candidate by InfoScore, is
/// completed greedily by the diversity-guided score, refined by single swaps
/// towards a local maximum of `sum_e s(e, E - e)`, and finally put in a
/// uniformly random order.
pub fn init_permutations(
    space: &SearchSpace,
    cfg: &SearchConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Permutation>> {
    if space.len() < cfg.n_demos {
        return Err(Error::Infeasible(format!(
            "{} candidates for {} demonstrations",
            space.len(),
            cfg.n_demos
        )));
    }
    let quota = quotas(space, cfg)?;
    let order = space.by_infoscore();
    let mut out: Vec<Permutation> = Vec::with_capacity(cfg.beam);
    for b in 0..cfg.beam {
        let first = order[b % order.len()];
        let slots = greedy_local_search(space, first, cfg, quota.as_deref())?;
        let mut ids: Vec<ExampleId> = slots.into_iter().map(|i| space.ids[i]).collect();
        // Seeds often converge to the same set; draw a fresh order when the
        // set has orders left to give.
        for _ in 0..MAX_RESHUFFLES {
            ids.shuffle(rng);
            if !out.iter().any(|p| p.ids() == ids.as_slice()) {
                break;
            }
        }
        out.push(Permutation::new(ids)?);
    }
    Ok(out)
}

const MAX_RESHUFFLES: usize = 64;

/// Replaces a uniformly chosen member with the best-scoring outside
/// candidate against the remaining members; the new example takes the old
/// one's position. Under label balance the replacement keeps the label.
pub fn substitute(
    perm: &Permutation,
    space: &SearchSpace,
    cfg: &SearchConfig,
    rng: &mut impl Rng,
) -> Result<Permutation> {
    if perm.is_empty() {
        return Ok(perm.clone());
    }
    let pos = rng.random_range(0..perm.len());
    let out = perm.ids()[pos];
    let rest: Vec<usize> = perm
        .ids()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != pos)
        .map(|(_, &id)| space.slot(id))
        .collect::<Result<_>>()?;
    let out_label = space.label(out)?;
    let mut best: Option<(usize, f64)> = None;
    for i in 0..space.len() {
        let id = space.ids[i];
        if perm.contains(id) || (cfg.label_balance && space.labels[i] != out_label) {
            continue;
        }
        let s = space.score_slot(i, &rest, cfg.lambda);
        let better = match best {
            None => true,
            Some((b, bs)) => s > bs || (s == bs && id < space.ids[b]),
        };
        if better {
            best = Some((i, s));
        }
    }
    let Some((pick, _)) = best else {
        tracing::warn!("no eligible substitute for example {out} in {perm}");
        return Ok(perm.clone());
    };
    let mut ids = perm.ids().to_vec();
    ids[pos] = space.ids[pick];
    Permutation::new(ids)
}

/// Uniformly random reordering of the same ids.
pub fn shuffle(perm: &Permutation, rng: &mut impl Rng) -> Permutation {
    let mut ids = perm.ids().to_vec();
    ids.shuffle(rng);
    Permutation::new(ids).expect("shuffling preserves uniqueness")
}

/// Samples a label-stratified validation set of `size` ids from
/// `dataset` minus `exclude`, in ascending id order.
pub fn sample_validation(
    dataset: &Dataset,
    exclude: &[ExampleId],
    size: usize,
    seed: u64,
) -> Result<Vec<ExampleId>> {
    let excluded: HashSet<ExampleId> = exclude.iter().copied().collect();
    let mut by_label: Vec<Vec<ExampleId>> = vec![Vec::new(); dataset.num_labels()];
    for e in dataset.examples() {
        if !excluded.contains(&e.id) {
            by_label[e.label].push(e.id);
        }
    }
    let available: usize = by_label.iter().map(Vec::len).sum();
    if available < size {
        return Err(Error::Config(format!(
            "validation set of {size} requested but only {available} examples lie outside the candidates"
        )));
    }
    // Proportional allocation by largest remainder, ties to the lower label.
    let mut alloc: Vec<usize> = by_label
        .iter()
        .map(|ids| ids.len() * size / available)
        .collect();
    let mut remainders: Vec<(usize, usize)> = by_label
        .iter()
        .enumerate()
        .map(|(l, ids)| ((ids.len() * size) % available, l))
        .collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut missing = size - alloc.iter().sum::<usize>();
    for &(_, l) in &remainders {
        if missing == 0 {
            break;
        }
        if alloc[l] < by_label[l].len() {
            alloc[l] += 1;
            missing -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ VALIDATION_STREAM);
    let mut chosen: Vec<ExampleId> = by_label
        .iter()
        .zip(&alloc)
        .flat_map(|(ids, &k)| {
            index::sample(&mut rng, ids.len(), k)
                .into_iter()
                .map(|i| ids[i])
                .collect::<Vec<_>>()
        })
        .collect();
    chosen.sort();
    Ok(chosen)
}

/// Validation accuracy of a single permutation.
pub fn evaluate_on_validation(
    perm: &Permutation,
    validation: &[&Example],
    demo_source: &Dataset,
    template: &PromptTemplate,
    scorer: &Scorer,
    calibration: Calibration,
) -> Result<f64> {
    let predictor = Predictor::new(demo_source, template, scorer, calibration);
    Ok(predictor.accuracies(&[perm], validation)?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamMember {
    pub ids: Permutation,
    pub valid_accuracy: f64,
    pub provenance: Provenance,
    pub created: usize,
}

/// One line of `search_trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub beam: Vec<BeamMember>,
    pub best_accuracy: f64,
    pub generated_children: usize,
    pub fresh_evaluations: usize,
    pub scorer_calls: u64,
}

pub struct SearchOutcome {
    pub best: ScoredPermutation,
    pub trace: Vec<TraceRecord>,
    /// Children produced by substitution and shuffling (`B * B * I`).
    pub generated_children: usize,
    /// Distinct children that needed a validation run.
    pub child_evaluations: usize,
    /// Validation runs spent on the initial beam.
    pub init_evaluations: usize,
}

/// Memoized validation accuracy; counts distinct permutations evaluated.
struct Validator<'a> {
    predictor: Predictor<'a>,
    items: Vec<&'a Example>,
    memo: HashMap<Permutation, f64>,
}

impl Validator<'_> {
    /// Accuracies in input order; returns how many were newly evaluated.
    fn evaluate(&mut self, perms: &[&Permutation]) -> Result<(Vec<f64>, usize)> {
        let mut fresh: Vec<&Permutation> = Vec::new();
        let mut pending = HashSet::new();
        for &p in perms {
            if !self.memo.contains_key(p) && pending.insert(p) {
                fresh.push(p);
            }
        }
        if !fresh.is_empty() {
            let acc = self.predictor.accuracies(&fresh, &self.items)?;
            for (p, a) in fresh.iter().zip(acc) {
                self.memo.insert((*p).clone(), a);
            }
        }
        Ok((perms.iter().map(|p| self.memo[*p]).collect(), fresh.len()))
    }
}

fn rank_pool(pool: &mut [ScoredPermutation]) {
    pool.sort_by(|a, b| {
        b.valid_accuracy
            .total_cmp(&a.valid_accuracy)
            .then(a.created.cmp(&b.created))
            .then(a.permutation.ids().cmp(b.permutation.ids()))
    });
}

fn beam_members(beam: &[ScoredPermutation]) -> Vec<BeamMember> {
    beam.iter()
        .map(|s| BeamMember {
            ids: s.permutation.clone(),
            valid_accuracy: s.valid_accuracy,
            provenance: s.provenance,
            created: s.created,
        })
        .collect()
}

/// Everything the beam search reads besides its configuration.
pub struct SearchInputs<'a> {
    pub space: &'a SearchSpace,
    pub demo_source: &'a Dataset,
    pub validation: Vec<&'a Example>,
    pub template: &'a PromptTemplate,
    pub scorer: &'a Scorer,
    pub calibration: Calibration,
}

/// Beam search with pooled elitist selection.
///
/// Each iteration expands every beam member into `subst` substitution
/// children and `beam - subst` shuffle children, pools all children with
/// the current beam, and keeps the top `beam` by validation accuracy (ties:
/// earlier creation, then lexicographically smaller ids). Initial
/// permutations are evaluated once up front; children count against the
/// `beam * beam * iterations` budget.
pub fn beam_search(
    init: Vec<Permutation>,
    inputs: &SearchInputs<'_>,
    cfg: &SearchConfig,
    rng: &mut impl Rng,
) -> Result<SearchOutcome> {
    cfg.validate(inputs.space.n_labels)?;
    if init.is_empty() {
        return Err(Error::Config("no initial permutations".into()));
    }
    for p in &init {
        check_permutation(p, inputs.space, cfg)?;
    }
    let mut validator = Validator {
        predictor: Predictor::new(
            inputs.demo_source,
            inputs.template,
            inputs.scorer,
            inputs.calibration,
        ),
        items: inputs.validation.clone(),
        memo: HashMap::new(),
    };
    let calls_start = inputs.scorer.backend_calls();
    let (acc, init_evaluations) = validator.evaluate(&init.iter().collect::<Vec<_>>())?;
    let mut created = 0;
    let mut beam: Vec<ScoredPermutation> = Vec::new();
    for (p, a) in init.into_iter().zip(acc) {
        beam.push(ScoredPermutation {
            permutation: p,
            valid_accuracy: a,
            provenance: Provenance::Init,
            created,
        });
        created += 1;
    }
    dedup_keep_first(&mut beam);
    rank_pool(&mut beam);
    beam.truncate(cfg.beam);

    let mut trace = vec![TraceRecord {
        iteration: 0,
        beam: beam_members(&beam),
        best_accuracy: beam[0].valid_accuracy,
        generated_children: 0,
        fresh_evaluations: init_evaluations,
        scorer_calls: inputs.scorer.backend_calls() - calls_start,
    }];
    let mut generated_children = 0;
    let mut child_evaluations = 0;

    for iteration in 1..=cfg.iterations {
        let calls_before = inputs.scorer.backend_calls();
        let mut children: Vec<(Permutation, Provenance)> = Vec::with_capacity(cfg.beam * cfg.beam);
        for member in &beam {
            for _ in 0..cfg.subst {
                children.push((
                    substitute(&member.permutation, inputs.space, cfg, rng)?,
                    Provenance::Substitution,
                ));
            }
            for _ in cfg.subst..cfg.beam {
                children.push((shuffle(&member.permutation, rng), Provenance::Shuffle));
            }
        }
        let n_children = children.len();
        generated_children += n_children;
        let (acc, fresh) =
            validator.evaluate(&children.iter().map(|(p, _)| p).collect::<Vec<_>>())?;
        child_evaluations += fresh;

        let mut pool = beam.clone();
        for ((permutation, provenance), valid_accuracy) in children.into_iter().zip(acc) {
            pool.push(ScoredPermutation {
                permutation,
                valid_accuracy,
                provenance,
                created,
            });
            created += 1;
        }
        dedup_keep_first(&mut pool);
        rank_pool(&mut pool);
        pool.truncate(cfg.beam);
        beam = pool;
        trace.push(TraceRecord {
            iteration,
            beam: beam_members(&beam),
            best_accuracy: beam[0].valid_accuracy,
            generated_children: n_children,
            fresh_evaluations: fresh,
            scorer_calls: inputs.scorer.backend_calls() - calls_before,
        });
    }

    Ok(SearchOutcome {
        best: beam[0].clone(),
        trace,
        generated_children,
        child_evaluations,
        init_evaluations,
    })
}

/// Keeps the earliest-created copy of each permutation.
fn dedup_keep_first(pool: &mut Vec<ScoredPermutation>) {
    pool.sort_by_key(|s| s.created);
    let mut seen = HashSet::new();
    pool.retain(|s| seen.insert(s.permutation.clone()));
}

/// Checks the invariants every emitted permutation must satisfy.
pub fn check_permutation(
    perm: &Permutation,
    space: &SearchSpace,
    cfg: &SearchConfig,
) -> Result<()> {
    if perm.len() != cfg.n_demos {
        return Err(Error::Permutation(format!(
            "{perm} has {} ids, expected {}",
            perm.len(),
            cfg.n_demos
        )));
    }
    let mut counts = vec![0usize; space.n_labels];
    for &id in perm.ids() {
        counts[space.label(id)?] += 1;
    }
    if cfg.label_balance {
        let quota = cfg.n_demos / space.n_labels;
        if counts.iter().any(|&c| c != quota) {
            return Err(Error::Permutation(format!(
                "{perm} label counts {counts:?} differ from quota {quota}"
            )));
        }
    }
    Ok(())
}

/// Convenience wrapper running initialization and beam search with the
/// configured seed.
pub fn run_search(inputs: &SearchInputs<'_>, cfg: &SearchConfig) -> Result<SearchOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SEARCH_STREAM);
    let init = init_permutations(inputs.space, cfg, &mut rng)?;
    beam_search(init, inputs, cfg, &mut rng)
}

/// A uniformly random permutation of `n` ids from `pool`, label-balanced
/// when requested.
pub fn random_permutation(
    dataset: &Dataset,
    pool: &[ExampleId],
    n: usize,
    label_balance: bool,
    rng: &mut impl Rng,
) -> Result<Permutation> {
    let mut ids: Vec<ExampleId> = if label_balance {
        let k = dataset.num_labels();
        let mut by_label: Vec<Vec<ExampleId>> = vec![Vec::new(); k];
        for &id in pool {
            by_label[dataset.get(id)?.label].push(id);
        }
        let quota = n / k;
        let mut out = Vec::with_capacity(n);
        for ids in &by_label {
            if ids.len() < quota {
                return Err(Error::Infeasible("not enough examples per label".into()));
            }
            out.extend(
                index::sample(rng, ids.len(), quota)
                    .into_iter()
                    .map(|i| ids[i]),
            );
        }
        out
    } else {
        if pool.len() < n {
            return Err(Error::Infeasible("pool smaller than n".into()));
        }
        index::sample(rng, pool.len(), n)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    };
    ids.shuffle(rng);
    Permutation::new(ids)
}
