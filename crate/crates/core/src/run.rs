//! Run configuration, run directories and the stage commands.
//!
//! A run directory holds every artifact of one run:
//!
//! ```text
//! run_dir/
//!   config.lock.json      resolved configuration
//!   scores.cache.jsonl    scorer cache
//!   contributions.jsonl   pairwise contributions from filtering
//!   filter_report.json
//!   search_trace.jsonl
//!   support_examples.json
//!   eval_report.json
//! ```
//!
//! Each stage reads the previous stage's artifacts from disk, so stages can
//! be rerun or resumed independently.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{
    ingest_dataset, DataFormat, Dataset, ExampleId, Permutation, PromptTemplate, TemplateConfig,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_testset, Calibration, LabelBreakdown, Prediction};
use crate::filtering::{
    default_schedule, progressive_filter, FilterConfig, FilterReport, DEFAULT_PAIR_BUDGET,
};
use crate::infoscore::ContributionMatrix;
use crate::scoring::remote::{RemoteBackend, RemoteConfig};
use crate::scoring::synthetic::{
    make_planted_dataset, PlantedConfig, PlantedModel, SyntheticBackend,
};
use crate::scoring::{ScoreBackend, Scorer};
use crate::search::{
    run_search, sample_validation, SearchConfig, SearchInputs, SearchSpace, TraceRecord,
};

pub const CONFIG_SCHEMA: &str = "lens.run_config/v1";
pub const SUPPORT_SCHEMA: &str = "lens.support_examples/v1";
pub const EVAL_SCHEMA: &str = "lens.eval_report/v1";
pub const ERROR_SCHEMA: &str = "lens.error/v1";

pub const CONFIG_LOCK: &str = "config.lock.json";
pub const SCORE_CACHE: &str = "scores.cache.jsonl";
pub const CONTRIBUTIONS: &str = "contributions.jsonl";
pub const FILTER_REPORT: &str = "filter_report.json";
pub const SEARCH_TRACE: &str = "search_trace.jsonl";
pub const SUPPORT_EXAMPLES: &str = "support_examples.json";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const ERROR_RECORD: &str = "error.json";
const LOCK_FILE: &str = ".lock";

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(ctx(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(ctx(), e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let ctx = || format!("reading {}", path.display());
    let text = fs::read_to_string(path).map_err(|e| Error::io(ctx(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(ctx(), e))
}

/// Template given inline or as a path to a template document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateSource {
    Inline(TemplateConfig),
    Path(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Synthetic,
    Remote,
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(ScorerKind::Synthetic),
            "remote" => Ok(ScorerKind::Remote),
            other => Err(Error::Config(format!(
                "unknown scorer {other:?}; expected synthetic or remote"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    /// Planted model document for the synthetic scorer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Remote settings; the environment overrides them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retries: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub m: usize,
    /// Both default to [`default_schedule`] when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    /// Target number of filtering rounds for the default schedule.
    pub rounds: u32,
    /// Pair budget for the default schedule's initial score-set size.
    pub pair_budget: u64,
    pub label_balance: bool,
    pub invert: bool,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            m: 500,
            rho: None,
            l: None,
            rounds: 4,
            pair_budget: DEFAULT_PAIR_BUDGET,
            label_balance: true,
            invert: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub n_demos: usize,
    pub beam: usize,
    pub subst: Option<usize>,
    pub iterations: usize,
    pub lambda: f64,
    pub valid_size: usize,
    pub label_balance: bool,
}

impl Default for SearchSettings {
    fn default() -> Self {
        let d = SearchConfig::default();
        SearchSettings {
            n_demos: d.n_demos,
            beam: d.beam,
            subst: None,
            iterations: d.iterations,
            lambda: d.lambda,
            valid_size: d.valid_size,
            label_balance: d.label_balance,
        }
    }
}

fn default_workers() -> usize {
    4
}

/// Configuration document as written by users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub train: PathBuf,
    pub test: PathBuf,
    pub labels: Vec<String>,
    pub template: TemplateSource,
    #[serde(default)]
    pub filter: FilterSettings,
    #[serde(default)]
    pub search: SearchSettings,
    pub scorer: ScorerSpec,
    #[serde(default)]
    pub calibration: Calibration,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub run_dir: PathBuf,
}

impl RunConfig {
    /// Reads a config; relative paths are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        if cfg.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!(
                "{}: schema {:?}, expected {CONFIG_SCHEMA:?}",
                path.display(),
                cfg.schema
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.train);
        rebase(&mut cfg.test);
        rebase(&mut cfg.run_dir);
        if let TemplateSource::Path(p) = &mut cfg.template {
            rebase(p);
        }
        if let Some(p) = &mut cfg.scorer.model {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dir) = &o.run_dir {
            self.run_dir = dir.clone();
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(kind) = o.scorer {
            self.scorer.kind = kind;
        }
        if let Some(c) = o.calibration {
            self.calibration = c;
        }
        if o.invert {
            self.filter.invert = true;
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub run_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub scorer: Option<ScorerKind>,
    pub calibration: Option<Calibration>,
    pub invert: bool,
}

/// Fully resolved configuration, written to `config.lock.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub schema: String,
    pub train: PathBuf,
    pub test: PathBuf,
    pub labels: Vec<String>,
    pub template: TemplateConfig,
    pub filter: FilterConfig,
    pub search: SearchConfig,
    pub scorer: ScorerSpec,
    pub calibration: Calibration,
    pub seed: u64,
    pub workers: usize,
}

/// Everything a stage needs, loaded once.
pub struct Context {
    pub config: ResolvedConfig,
    pub run_dir: PathBuf,
    pub train: Dataset,
    pub test: Dataset,
    pub template: PromptTemplate,
    pub scorer: Scorer,
}

impl Context {
    pub fn new(mut cfg: RunConfig, overrides: &Overrides) -> Result<Self> {
        cfg.apply(overrides);
        let train = ingest_dataset(&cfg.train, DataFormat::from_path(&cfg.train), &cfg.labels)?;
        let test = ingest_dataset(&cfg.test, DataFormat::from_path(&cfg.test), &cfg.labels)?;
        let template_cfg = match &cfg.template {
            TemplateSource::Inline(t) => t.clone(),
            TemplateSource::Path(p) => read_json(p)?,
        };
        let template = PromptTemplate::from_config(&template_cfg, &cfg.labels)?;

        let f = &cfg.filter;
        let schedule = default_schedule(train.len(), f.m, f.rounds, f.pair_budget);
        let filter = FilterConfig {
            m: f.m,
            rho: f.rho.unwrap_or(schedule.rho),
            l: f.l.unwrap_or(schedule.l),
            seed: cfg.seed,
            label_balance: f.label_balance,
            invert: f.invert,
        };
        filter.validate(&train)?;
        let s = &cfg.search;
        let search = SearchConfig {
            n_demos: s.n_demos,
            beam: s.beam,
            subst: s.subst.unwrap_or(s.beam / 2).max(1),
            iterations: s.iterations,
            lambda: s.lambda,
            valid_size: s.valid_size,
            seed: cfg.seed,
            label_balance: s.label_balance,
        };
        search.validate(cfg.labels.len())?;
        if search.n_demos > filter.m {
            return Err(Error::Config(format!(
                "n_demos = {} exceeds the {} filtered candidates",
                search.n_demos, filter.m
            )));
        }

        fs::create_dir_all(&cfg.run_dir)
            .map_err(|e| Error::io(format!("creating {}", cfg.run_dir.display()), e))?;
        let backend = make_backend(&cfg.scorer)?;
        let scorer = Scorer::persistent(backend, &cfg.run_dir.join(SCORE_CACHE), cfg.workers)?;
        let config = ResolvedConfig {
            schema: CONFIG_SCHEMA.into(),
            train: cfg.train.clone(),
            test: cfg.test.clone(),
            labels: cfg.labels.clone(),
            template: template_cfg,
            filter,
            search,
            scorer: cfg.scorer.clone(),
            calibration: cfg.calibration,
            seed: cfg.seed,
            workers: cfg.workers,
        };
        Ok(Context {
            config,
            run_dir: cfg.run_dir,
            train,
            test,
            template,
            scorer,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }
}

fn make_backend(spec: &ScorerSpec) -> Result<Arc<dyn ScoreBackend>> {
    match spec.kind {
        ScorerKind::Synthetic => {
            let path = spec
                .model
                .as_ref()
                .ok_or_else(|| Error::Config("synthetic scorer needs scorer.model".into()))?;
            let model: PlantedModel = read_json(path)?;
            Ok(Arc::new(SyntheticBackend::new(Arc::new(model))?))
        }
        ScorerKind::Remote => {
            let mut remote = match &spec.url {
                Some(url) => RemoteConfig::new(url.clone()),
                None => RemoteConfig::new(String::new()),
            };
            if let Some(t) = spec.timeout_ms {
                remote.timeout_ms = t;
            }
            if let Some(r) = spec.retries {
                remote.retries = r;
            }
            if let Ok(url) = std::env::var(crate::scoring::remote::ENV_URL) {
                remote.url = url;
            }
            remote.apply_env()?;
            if remote.url.is_empty() {
                return Err(Error::Config(format!(
                    "remote scorer needs scorer.url or {}",
                    crate::scoring::remote::ENV_URL
                )));
            }
            Ok(Arc::new(RemoteBackend::new(remote)))
        }
    }
}

/// Exclusive ownership of a run directory; released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        fs::create_dir_all(run_dir)
            .map_err(|e| Error::io(format!("creating {}", run_dir.display()), e))?;
        let path = run_dir.join(LOCK_FILE);
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::Locked(path.clone()),
                _ => Error::io(format!("creating {}", path.display()), e),
            })?;
        writeln!(file, "{}", std::process::id())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(RunLock { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Filter,
    Search,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Filter => "filter",
            Stage::Search => "search",
            Stage::Eval => "eval",
        }
    }

    fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Filter => &[CONTRIBUTIONS, FILTER_REPORT],
            Stage::Search => &[SEARCH_TRACE, SUPPORT_EXAMPLES],
            Stage::Eval => &[EVAL_REPORT],
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filter" => Ok(Stage::Filter),
            "search" => Ok(Stage::Search),
            "eval" => Ok(Stage::Eval),
            other => Err(Error::Config(format!(
                "unknown stage {other:?}; expected filter, search or eval"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportExample {
    pub id: ExampleId,
    pub text: String,
    pub label: String,
}

/// Final ordered demonstrations, `support_examples.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportExamples {
    pub schema: String,
    pub template_id: String,
    pub ids: Permutation,
    pub examples: Vec<SupportExample>,
    #[serde(default)]
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub per_label: Vec<LabelBreakdown>,
    pub calibration: String,
    pub support_ids: Permutation,
    pub scorer_calls: u64,
    pub wall_time_ms: u64,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub schema: String,
    pub stage: Option<String>,
    pub kind: String,
    pub message: String,
}

/// Filtering stage: writes `contributions.jsonl` and `filter_report.json`.
pub fn stage_filter(ctx: &Context) -> Result<FilterReport> {
    let outcome = progressive_filter(&ctx.train, &ctx.config.filter, &ctx.template, &ctx.scorer)?;
    outcome.matrix.save(&ctx.path(CONTRIBUTIONS))?;
    outcome.report.save(&ctx.path(FILTER_REPORT))?;
    ctx.scorer.cache().flush()?;
    tracing::info!(
        candidates = outcome.candidates.len(),
        calls = outcome.report.scorer_calls,
        "filter stage done"
    );
    Ok(outcome.report)
}

/// Search stage: reads filter artifacts, writes the trace and support set.
pub fn stage_search(ctx: &Context) -> Result<SupportExamples> {
    let matrix = ContributionMatrix::load(&ctx.path(CONTRIBUTIONS))?;
    let report = FilterReport::load(&ctx.path(FILTER_REPORT))?;
    let candidates = report.candidate_ids();
    let score_set = &report.score_set.members;
    let space = SearchSpace::build(&ctx.train, &candidates, score_set, &matrix)?;
    let cfg = &ctx.config.search;
    let validation_ids = sample_validation(&ctx.train, &candidates, cfg.valid_size, cfg.seed)?;
    let inputs = SearchInputs {
        space: &space,
        demo_source: &ctx.train,
        validation: ctx.train.resolve(&validation_ids)?,
        template: &ctx.template,
        scorer: &ctx.scorer,
        calibration: ctx.config.calibration,
    };
    let outcome = run_search(&inputs, cfg)?;
    write_trace(&ctx.path(SEARCH_TRACE), &outcome.trace)?;
    let best = outcome.best.permutation;
    let support = SupportExamples {
        schema: SUPPORT_SCHEMA.into(),
        template_id: ctx.template.id().to_string(),
        examples: ctx
            .train
            .resolve(best.ids())?
            .into_iter()
            .map(|e| SupportExample {
                id: e.id,
                text: e.text.clone(),
                label: ctx.train.label_space()[e.label].clone(),
            })
            .collect(),
        ids: best,
        validation_accuracy: Some(outcome.best.valid_accuracy),
    };
    write_json(&ctx.path(SUPPORT_EXAMPLES), &support)?;
    ctx.scorer.cache().flush()?;
    tracing::info!(
        accuracy = outcome.best.valid_accuracy,
        evaluations = outcome.child_evaluations,
        "search stage done"
    );
    Ok(support)
}

fn write_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut out = String::new();
    for record in trace {
        out.push_str(&serde_json::to_string(record).map_err(|e| Error::json(ctx(), e))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(ctx(), e))
}

/// Reads `support_examples.json` and checks it against the training set.
pub fn load_support(path: &Path, train: &Dataset) -> Result<SupportExamples> {
    let support: SupportExamples = read_json(path)?;
    if support.examples.len() != support.ids.len() {
        return Err(Error::LengthMismatch(
            support.ids.len(),
            support.examples.len(),
        ));
    }
    for (id, ex) in support.ids.ids().iter().zip(&support.examples) {
        let stored = train.get(*id)?;
        if ex.id != *id || ex.text != stored.text || ex.label != train.label_space()[stored.label] {
            return Err(Error::Consistency(format!(
                "{}: entry for example {id} does not match the training set",
                path.display()
            )));
        }
    }
    Ok(support)
}

/// Evaluation stage: scores the support permutation on the test set.
pub fn stage_eval(ctx: &Context) -> Result<EvalReport> {
    let start = Instant::now();
    let calls_before = ctx.scorer.backend_calls();
    let support = load_support(&ctx.path(SUPPORT_EXAMPLES), &ctx.train)?;
    if support.template_id != ctx.template.id() {
        tracing::warn!(
            expected = ctx.template.id(),
            found = support.template_id,
            "support examples were selected with a different template"
        );
    }
    let result = evaluate_testset(
        &support.ids,
        &ctx.train,
        &ctx.test,
        &ctx.template,
        &ctx.scorer,
        ctx.config.calibration,
    )?;
    ctx.scorer.cache().flush()?;
    let correct = result.per_label.iter().map(|l| l.correct).sum();
    let report = EvalReport {
        schema: EVAL_SCHEMA.into(),
        accuracy: result.accuracy,
        correct,
        total: ctx.test.len(),
        per_label: result.per_label,
        calibration: ctx.config.calibration.report_name().into(),
        support_ids: support.ids,
        scorer_calls: ctx.scorer.backend_calls() - calls_before,
        wall_time_ms: start.elapsed().as_millis() as u64,
        predictions: result.predictions,
    };
    write_json(&ctx.path(EVAL_REPORT), &report)?;
    tracing::info!(accuracy = report.accuracy, "eval stage done");
    Ok(report)
}

/// Options shared by the stage commands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub overrides: Overrides,
    /// First stage of `select`; earlier stages must have left artifacts.
    pub stage: Option<Stage>,
    /// Skip stages whose artifacts are already present.
    pub resume: bool,
}

/// What a command did, for reporting.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub stages_run: Vec<Stage>,
    pub stages_skipped: Vec<Stage>,
    pub backend_calls: u64,
    pub accuracy: Option<f64>,
}

fn check_lock(ctx: &Context, resume: bool) -> Result<()> {
    let path = ctx.path(CONFIG_LOCK);
    if path.exists() {
        let existing: serde_json::Value = read_json(&path)?;
        let current = serde_json::to_value(&ctx.config).map_err(|e| Error::json("config", e))?;
        if existing != current {
            if resume {
                return Err(Error::Config(format!(
                    "cannot resume: {} was written for a different configuration",
                    path.display()
                )));
            }
            tracing::warn!("replacing {} with a new configuration", path.display());
        }
    }
    write_json(&path, &ctx.config)
}

fn run_stages(
    config: RunConfig,
    opts: &RunOptions,
    first: Stage,
    last: Stage,
) -> Result<RunSummary> {
    let mut run_dir = config.run_dir.clone();
    if let Some(dir) = &opts.overrides.run_dir {
        run_dir = dir.clone();
    }
    let _lock = RunLock::acquire(&run_dir)?;
    let mut current: Option<Stage> = None;
    let result = (|| {
        let ctx = Context::new(config, &opts.overrides)?;
        check_lock(&ctx, opts.resume)?;
        let mut summary = RunSummary {
            run_dir: ctx.run_dir.clone(),
            ..RunSummary::default()
        };
        for stage in [Stage::Filter, Stage::Search, Stage::Eval] {
            if stage < first || stage > last {
                continue;
            }
            let done = stage.outputs().iter().all(|f| ctx.path(f).exists());
            if opts.resume && done {
                summary.stages_skipped.push(stage);
                continue;
            }
            current = Some(stage);
            match stage {
                Stage::Filter => {
                    stage_filter(&ctx)?;
                }
                Stage::Search => {
                    stage_search(&ctx)?;
                }
                Stage::Eval => {
                    summary.accuracy = Some(stage_eval(&ctx)?.accuracy);
                }
            }
            summary.stages_run.push(stage);
        }
        summary.backend_calls = ctx.scorer.backend_calls();
        Ok(summary)
    })();
    match &result {
        Ok(_) => {
            let _ = fs::remove_file(run_dir.join(ERROR_RECORD));
        }
        Err(e) => write_error_record(&run_dir, current, e),
    }
    result
}

/// Records a failure as `error.json` in the run directory.
pub fn write_error_record(run_dir: &Path, stage: Option<Stage>, err: &Error) {
    let record = ErrorRecord {
        schema: ERROR_SCHEMA.into(),
        stage: stage.map(|s| s.name().to_string()),
        kind: err.kind().to_string(),
        message: err.to_string(),
    };
    if fs::create_dir_all(run_dir).is_ok() {
        if let Err(e) = write_json(&run_dir.join(ERROR_RECORD), &record) {
            tracing::error!("could not write error record: {e}");
        }
    }
}

/// Filter, search and evaluate.
pub fn cmd_select(config: RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    run_stages(
        config,
        opts,
        opts.stage.unwrap_or(Stage::Filter),
        Stage::Eval,
    )
}

pub fn cmd_filter(config: RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    run_stages(config, opts, Stage::Filter, Stage::Filter)
}

pub fn cmd_search(config: RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    run_stages(config, opts, Stage::Search, Stage::Search)
}

pub fn cmd_eval(config: RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    run_stages(config, opts, Stage::Eval, Stage::Eval)
}

/// Files describing a planted testbed on disk.
#[derive(Debug, Clone)]
pub struct PlantedFiles {
    pub train: PathBuf,
    pub test: PathBuf,
    pub template: PathBuf,
    pub model: PathBuf,
    pub config: PathBuf,
}

/// Writes a planted testbed and a run config using it into `dir`.
///
/// The config's filter and search sizes are scaled to the dataset so the
/// pipeline runs out of the box.
pub fn write_planted(dir: &Path, planted: &PlantedConfig) -> Result<PlantedFiles> {
    let bed = make_planted_dataset(planted)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let files = PlantedFiles {
        train: dir.join("train.jsonl"),
        test: dir.join("test.jsonl"),
        template: dir.join("template.json"),
        model: dir.join("model.json"),
        config: dir.join("config.json"),
    };
    let write_records = |path: &Path, ds: &Dataset| -> Result<()> {
        let ctx = || format!("writing {}", path.display());
        let mut f = File::create(path).map_err(|e| Error::io(ctx(), e))?;
        for e in ds.examples() {
            let line = serde_json::json!({"text": e.text, "label": ds.label_space()[e.label]});
            writeln!(f, "{line}").map_err(|e| Error::io(ctx(), e))?;
        }
        Ok(())
    };
    write_records(&files.train, &bed.train)?;
    write_records(&files.test, &bed.test)?;
    write_json(&files.template, &bed.model.template)?;
    write_json(&files.model, &*bed.model)?;

    let n = planted.n_train;
    let n_labels = planted.labels.len();
    let m = (n / 4).max(n_labels * 2) / n_labels * n_labels;
    let n_demos = n_labels * 2;
    let config = RunConfig {
        schema: CONFIG_SCHEMA.into(),
        train: "train.jsonl".into(),
        test: "test.jsonl".into(),
        labels: planted.labels.clone(),
        template: TemplateSource::Path("template.json".into()),
        filter: FilterSettings {
            m,
            ..FilterSettings::default()
        },
        search: SearchSettings {
            n_demos,
            valid_size: (n - m).min(100),
            ..SearchSettings::default()
        },
        scorer: ScorerSpec {
            kind: ScorerKind::Synthetic,
            model: Some("model.json".into()),
            url: None,
            timeout_ms: None,
            retries: None,
        },
        calibration: Calibration::Off,
        seed: planted.seed,
        workers: default_workers(),
        run_dir: "run".into(),
    };
    write_json(&files.config, &config)?;
    Ok(files)
}
