use std::fs;
use std::path::{Path, PathBuf};

use lens_core::eval::Calibration;
use lens_core::run::{cmd_search, cmd_select, write_planted, RunConfig, RunOptions};
use lens_core::scoring::synthetic::PlantedConfig;
use serde_json::Value;

fn schema(name: &str) -> jsonschema::Validator {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(format!("{name}.schema.json"));
    let value: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    jsonschema::validator_for(&value).unwrap()
}

fn check(validator: &jsonschema::Validator, value: &Value, what: &str) {
    let errors: Vec<String> = validator
        .iter_errors(value)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{what}: {errors:?}");
}

fn check_file(name: &str, path: &Path) {
    let value: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    check(&schema(name), &value, &path.display().to_string());
}

fn check_lines(name: &str, path: &Path) -> usize {
    let validator = schema(name);
    let text = fs::read_to_string(path).unwrap();
    for (i, line) in text.lines().enumerate() {
        check(
            &validator,
            &serde_json::from_str(line).unwrap(),
            &format!("{}:{}", path.display(), i + 1),
        );
    }
    text.lines().count()
}

#[test]
fn every_artifact_matches_its_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let files = write_planted(
        tmp.path(),
        &PlantedConfig {
            n_train: 64,
            n_test: 40,
            seed: 5,
            ..Default::default()
        },
    )
    .unwrap();
    check_file("run_config", &files.config);
    let config = RunConfig::load(&files.config).unwrap();
    for (sub, calibration) in [("off", Calibration::Off), ("cf", Calibration::ContentFree)] {
        let run = tmp.path().join(sub);
        let mut opts = RunOptions::default();
        opts.overrides.run_dir = Some(run.clone());
        opts.overrides.calibration = Some(calibration);
        cmd_select(config.clone(), &opts).unwrap();
        check_file("config_lock", &run.join("config.lock.json"));
        check_file("filter_report", &run.join("filter_report.json"));
        check_file("support_examples", &run.join("support_examples.json"));
        check_file("eval_report", &run.join("eval_report.json"));
        assert!(check_lines("contribution", &run.join("contributions.jsonl")) > 0);
        assert_eq!(
            check_lines("search_trace", &run.join("search_trace.jsonl")),
            11
        );
        assert!(check_lines("score_cache_line", &run.join("scores.cache.jsonl")) > 0);
    }
    let report: Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("cf/eval_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["calibration"], "content_free(approx)");
    assert!(report["predictions"][0]["calibrated_scores"].is_array());

    let failed = tmp.path().join("failed");
    let mut opts = RunOptions::default();
    opts.overrides.run_dir = Some(failed.clone());
    cmd_search(config, &opts).unwrap_err();
    check_file("error", &failed.join("error.json"));
}

#[test]
fn schemas_reject_malformed_artifacts() {
    let support = schema("support_examples");
    let bad = serde_json::json!({
        "schema": "lens.support_examples/v1",
        "template_id": "t",
        "ids": [1, 1],
        "examples": []
    });
    assert!(!support.is_valid(&bad), "duplicate ids must be rejected");
    let contribution = schema("contribution");
    assert!(!contribution
        .is_valid(&serde_json::json!({"candidate_id": 0, "score_id": 1, "value": 1.5})));
    assert!(contribution
        .is_valid(&serde_json::json!({"candidate_id": 0, "score_id": 1, "value": -0.25})));
}
