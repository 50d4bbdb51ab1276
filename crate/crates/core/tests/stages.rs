use std::fs;
use std::path::Path;

use lens_core::filtering::FilterReport;
use lens_core::run::{
    cmd_eval, cmd_filter, cmd_search, cmd_select, write_planted, ErrorRecord, RunConfig, RunLock,
    RunOptions, Stage, CONTRIBUTIONS, ERROR_RECORD, EVAL_REPORT, FILTER_REPORT, SCORE_CACHE,
    SEARCH_TRACE, SUPPORT_EXAMPLES,
};
use lens_core::scoring::synthetic::PlantedConfig;
use lens_core::Error;

fn planted(dir: &Path, n_train: usize) -> RunConfig {
    let files = write_planted(
        dir,
        &PlantedConfig {
            n_train,
            n_test: 60,
            seed: 11,
            ..Default::default()
        },
    )
    .unwrap();
    RunConfig::load(&files.config).unwrap()
}

fn in_dir(dir: &Path) -> RunOptions {
    let mut opts = RunOptions::default();
    opts.overrides.run_dir = Some(dir.to_path_buf());
    opts
}

#[test]
fn select_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = planted(tmp.path(), 64);
    let run = tmp.path().join("run");
    let summary = cmd_select(cfg, &in_dir(&run)).unwrap();
    assert_eq!(
        summary.stages_run,
        vec![Stage::Filter, Stage::Search, Stage::Eval]
    );
    for f in [
        FILTER_REPORT,
        CONTRIBUTIONS,
        SEARCH_TRACE,
        SUPPORT_EXAMPLES,
        EVAL_REPORT,
        SCORE_CACHE,
        "config.lock.json",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    assert!(!run.join(ERROR_RECORD).exists());
    assert!(!run.join(".lock").exists());
}

#[test]
fn resumed_search_reuses_filter_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = planted(tmp.path(), 64);
    let run = tmp.path().join("run");
    let cold = cmd_select(cfg.clone(), &in_dir(&run)).unwrap();
    let filter_calls = FilterReport::load(&run.join(FILTER_REPORT))
        .unwrap()
        .scorer_calls;
    let contributions = fs::read(run.join(CONTRIBUTIONS)).unwrap();
    let support = fs::read(run.join(SUPPORT_EXAMPLES)).unwrap();

    for f in [SEARCH_TRACE, SUPPORT_EXAMPLES, EVAL_REPORT, SCORE_CACHE] {
        fs::remove_file(run.join(f)).unwrap();
    }
    let opts = RunOptions {
        stage: Some(Stage::Search),
        resume: true,
        ..in_dir(&run)
    };
    let resumed = cmd_select(cfg, &opts).unwrap();
    assert_eq!(resumed.stages_run, vec![Stage::Search, Stage::Eval]);
    // Search and evaluation requests never overlap filtering requests, so
    // the resumed run pays exactly the non-filter share of the cold run.
    assert_eq!(resumed.backend_calls, cold.backend_calls - filter_calls);
    assert_eq!(fs::read(run.join(CONTRIBUTIONS)).unwrap(), contributions);
    assert_eq!(fs::read(run.join(SUPPORT_EXAMPLES)).unwrap(), support);
}

#[test]
fn resume_skips_finished_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = planted(tmp.path(), 64);
    let run = tmp.path().join("run");
    cmd_select(cfg.clone(), &in_dir(&run)).unwrap();
    fs::remove_file(run.join(EVAL_REPORT)).unwrap();
    let summary = cmd_select(
        cfg,
        &RunOptions {
            resume: true,
            ..in_dir(&run)
        },
    )
    .unwrap();
    assert_eq!(summary.stages_skipped, vec![Stage::Filter, Stage::Search]);
    assert_eq!(summary.stages_run, vec![Stage::Eval]);
    assert_eq!(summary.backend_calls, 0);
}

#[test]
fn resume_refuses_a_changed_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = planted(tmp.path(), 64);
    let run = tmp.path().join("run");
    cmd_filter(cfg.clone(), &in_dir(&run)).unwrap();
    let mut opts = RunOptions {
        resume: true,
        ..in_dir(&run)
    };
    opts.overrides.seed = Some(99);
    assert!(matches!(cmd_select(cfg, &opts), Err(Error::Config(_))));
}

#[test]
fn search_without_contributions_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = planted(tmp.path(), 64);
    let run = tmp.path().join("run");
    let err = cmd_search(cfg, &in_dir(&run)).unwrap_err();
    match &err {
        Error::MissingArtifact(p) => assert!(p.ends_with(CONTRIBUTIONS)),
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains(CONTRIBUTIONS));
    let record: ErrorRecord =
        serde_json::from_slice(&fs::read(run.join(ERROR_RECORD)).unwrap()).unwrap();
    assert_eq!(record.stage.as_deref(), Some("search"));
    assert_eq!(record.kind, "missing_artifact");
}

#[test]
fn eval_accepts_hand_written_support_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = planted(tmp.path(), 64);
    let run = tmp.path().join("run");
    fs::create_dir_all(&run).unwrap();
    let support = serde_json::json!({
        "schema": "lens.support_examples/v1",
        "template_id": "planted",
        "ids": [3, 0],
        "examples": [
            {"id": 3, "text": "planted example 00003", "label": "negative"},
            {"id": 0, "text": "planted example 00000", "label": "positive"}
        ]
    });
    fs::write(run.join(SUPPORT_EXAMPLES), support.to_string()).unwrap();
    let summary = cmd_eval(cfg.clone(), &in_dir(&run)).unwrap();
    assert_eq!(summary.stages_run, vec![Stage::Eval]);
    let acc = summary.accuracy.unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(run.join(EVAL_REPORT).exists());

    let wrong = support.to_string().replace("00003", "00004");
    fs::write(run.join(SUPPORT_EXAMPLES), wrong).unwrap();
    assert!(matches!(
        cmd_eval(cfg, &in_dir(&run)),
        Err(Error::Consistency(_))
    ));
}

fn candidate_scores(run: &Path) -> Vec<f64> {
    FilterReport::load(&run.join(FILTER_REPORT))
        .unwrap()
        .candidates
        .iter()
        .map(|c| c.infoscore)
        .collect()
}

#[test]
fn inverted_filter_keeps_the_lowest_infoscores() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = planted(tmp.path(), 64);
    // One round over the full score set so both runs rank identical totals.
    cfg.filter.rho = Some(64.0);
    cfg.filter.l = Some(64);
    cfg.filter.label_balance = false;
    let high = tmp.path().join("high");
    let low = tmp.path().join("low");
    cmd_filter(cfg.clone(), &in_dir(&high)).unwrap();
    let mut opts = in_dir(&low);
    opts.overrides.invert = true;
    cmd_filter(cfg, &opts).unwrap();
    let (hi, lo) = (candidate_scores(&high), candidate_scores(&low));
    assert_eq!(hi.len(), lo.len());
    let lo_max = lo.iter().cloned().fold(f64::MIN, f64::max);
    let hi_min = hi.iter().cloned().fold(f64::MAX, f64::min);
    assert!(lo_max < hi_min, "{lo_max} >= {hi_min}");
    assert!(
        lo.windows(2).all(|w| w[0] <= w[1]),
        "inverted ranking is ascending"
    );
}

#[test]
fn a_locked_run_dir_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = planted(tmp.path(), 64);
    let run = tmp.path().join("run");
    let _held = RunLock::acquire(&run).unwrap();
    assert!(matches!(
        cmd_select(cfg, &in_dir(&run)),
        Err(Error::Locked(_))
    ));
}

#[test]
fn infeasible_schedule_leaves_an_error_record() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = planted(tmp.path(), 64);
    cfg.filter.rho = Some(2.0);
    cfg.filter.l = Some(64);
    let run = tmp.path().join("run");
    let err = cmd_select(cfg, &in_dir(&run)).unwrap_err();
    assert!(matches!(err, Error::Schedule(_)), "{err:?}");
    let record: ErrorRecord =
        serde_json::from_slice(&fs::read(run.join(ERROR_RECORD)).unwrap()).unwrap();
    assert_eq!(record.kind, "schedule");
    assert_eq!(record.stage.as_deref(), Some("filter"));
}
