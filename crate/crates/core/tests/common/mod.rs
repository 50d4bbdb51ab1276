#![allow(dead_code)]

use std::sync::Arc;

use lens_core::eval::{evaluate_testset, Calibration, Predictor};
use lens_core::filtering::{
    default_schedule, progressive_filter, FilterConfig, FilterOutcome, DEFAULT_PAIR_BUDGET,
};
use lens_core::scoring::synthetic::{make_planted_dataset, PlantedConfig, PlantedTestbed};
use lens_core::search::{
    random_permutation, run_search, sample_validation, SearchConfig, SearchInputs, SearchOutcome,
    SearchSpace,
};
use lens_core::{ExampleId, Permutation, Scorer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn testbed(cfg: &PlantedConfig) -> (PlantedTestbed, Scorer) {
    let bed = make_planted_dataset(cfg).unwrap();
    let scorer = Scorer::new(Arc::new(bed.backend().unwrap()), 4);
    (bed, scorer)
}

pub fn filter_with_default_schedule(
    bed: &PlantedTestbed,
    scorer: &Scorer,
    m: usize,
    seed: u64,
    label_balance: bool,
) -> FilterOutcome {
    let s = default_schedule(bed.train.len(), m, 4, DEFAULT_PAIR_BUDGET);
    let cfg = FilterConfig {
        m,
        rho: s.rho,
        l: s.l,
        seed,
        label_balance,
        invert: false,
    };
    progressive_filter(&bed.train, &cfg, &bed.template, scorer).unwrap()
}

pub struct PipelineRun {
    pub filter: FilterOutcome,
    pub search: SearchOutcome,
    pub validation: Vec<ExampleId>,
    pub test_accuracy: f64,
}

/// Filter, search and test-set evaluation on a planted testbed.
pub fn pipeline(
    bed: &PlantedTestbed,
    scorer: &Scorer,
    m: usize,
    search: &SearchConfig,
) -> PipelineRun {
    let filter = filter_with_default_schedule(bed, scorer, m, search.seed, search.label_balance);
    let space = SearchSpace::build(
        &bed.train,
        &filter.candidates,
        &filter.score_set.members,
        &filter.matrix,
    )
    .unwrap();
    let validation = sample_validation(
        &bed.train,
        &filter.candidates,
        search.valid_size,
        search.seed,
    )
    .unwrap();
    let inputs = SearchInputs {
        space: &space,
        demo_source: &bed.train,
        validation: bed.train.resolve(&validation).unwrap(),
        template: &bed.template,
        scorer,
        calibration: Calibration::Off,
    };
    let outcome = run_search(&inputs, search).unwrap();
    let test_accuracy = evaluate_testset(
        &outcome.best.permutation,
        &bed.train,
        &bed.test,
        &bed.template,
        scorer,
        Calibration::Off,
    )
    .unwrap()
    .accuracy;
    PipelineRun {
        filter,
        search: outcome,
        validation,
        test_accuracy,
    }
}

/// Random-&-validation baseline: `count` random permutations drawn from the
/// training set minus the validation set; the one with the best validation
/// accuracy (earliest on ties) is scored on the test set.
pub fn random_with_validation(
    bed: &PlantedTestbed,
    scorer: &Scorer,
    validation: &[ExampleId],
    n_demos: usize,
    label_balance: bool,
    count: usize,
    seed: u64,
) -> (f64, f64) {
    let pool: Vec<ExampleId> = bed
        .train
        .ids()
        .filter(|id| !validation.contains(id))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbad5eed);
    let perms: Vec<Permutation> = (0..count)
        .map(|_| random_permutation(&bed.train, &pool, n_demos, label_balance, &mut rng).unwrap())
        .collect();
    let refs: Vec<&Permutation> = perms.iter().collect();
    let predictor = Predictor::new(&bed.train, &bed.template, scorer, Calibration::Off);
    let v_acc = predictor
        .accuracies(&refs, &bed.train.resolve(validation).unwrap())
        .unwrap();
    let mut best = 0;
    for (i, a) in v_acc.iter().enumerate() {
        if *a > v_acc[best] {
            best = i;
        }
    }
    let test: Vec<_> = bed.test.examples().iter().collect();
    let t_acc = predictor.accuracies(&[&perms[best]], &test).unwrap()[0];
    (v_acc[best], t_acc)
}

/// True top-`k` training ids by planted q, ties to the lower id.
pub fn top_by_q(bed: &PlantedTestbed, k: usize) -> Vec<ExampleId> {
    let mut ids: Vec<ExampleId> = bed.train.ids().collect();
    ids.sort_by(|a, b| bed.q(*b).total_cmp(&bed.q(*a)).then(a.cmp(b)));
    ids.truncate(k);
    ids
}
