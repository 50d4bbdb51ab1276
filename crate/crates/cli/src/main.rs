use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lens_core::eval::Calibration;
use lens_core::run::{self, Overrides, RunConfig, RunOptions, RunSummary, ScorerKind, Stage};
use lens_core::scoring::synthetic::PlantedConfig;

#[derive(Parser)]
#[command(
    name = "lens",
    version,
    about = "Select support examples for in-context learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, search and evaluate end to end.
    Select(StageArgs),
    /// Progressive InfoScore filtering only.
    Filter(StageArgs),
    /// Diversity-guided search over filtered candidates.
    Search(StageArgs),
    /// Test-set evaluation of support_examples.json.
    Eval(StageArgs),
    /// Write a planted synthetic testbed and a config that uses it.
    Planted(PlantedArgs),
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_scorer)]
    scorer: Option<ScorerKind>,
    #[arg(long, value_parser = parse_calibration)]
    calibration: Option<Calibration>,
    /// First stage to run (select only).
    #[arg(long, value_parser = parse_stage)]
    stage: Option<Stage>,
    /// Skip stages whose artifacts already exist.
    #[arg(long)]
    resume: bool,
    /// Keep the lowest InfoScores when filtering.
    #[arg(long)]
    invert: bool,
}

#[derive(Args)]
struct PlantedArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    n_train: usize,
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    epsilon_max: f64,
}

fn parse_scorer(s: &str) -> Result<ScorerKind, String> {
    s.parse().map_err(|e: lens_core::Error| e.to_string())
}

fn parse_calibration(s: &str) -> Result<Calibration, String> {
    s.parse().map_err(|e: lens_core::Error| e.to_string())
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse().map_err(|e: lens_core::Error| e.to_string())
}

type StageFn = fn(RunConfig, &RunOptions) -> lens_core::Result<RunSummary>;

fn run_stage(args: StageArgs, f: StageFn, name: &str) -> lens_core::Result<()> {
    if args.stage.is_some() && name != "select" {
        return Err(lens_core::Error::Config(
            "--stage applies to select only".into(),
        ));
    }
    let config = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            if let Some(dir) = &args.run_dir {
                run::write_error_record(dir, None, &e);
            }
            return Err(e);
        }
    };
    let opts = RunOptions {
        overrides: Overrides {
            run_dir: args.run_dir,
            seed: args.seed,
            scorer: args.scorer,
            calibration: args.calibration,
            invert: args.invert,
        },
        stage: args.stage,
        resume: args.resume,
    };
    let summary = f(config, &opts)?;
    println!(
        "{}",
        serde_json::to_string(&summary).expect("summary serializes")
    );
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("LENS_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Select(a) => run_stage(a, run::cmd_select, "select"),
        Command::Filter(a) => run_stage(a, run::cmd_filter, "filter"),
        Command::Search(a) => run_stage(a, run::cmd_search, "search"),
        Command::Eval(a) => run_stage(a, run::cmd_eval, "eval"),
        Command::Planted(a) => {
            let cfg = PlantedConfig {
                n_train: a.n_train,
                n_test: a.n_test,
                seed: a.seed,
                epsilon_max: a.epsilon_max,
                ..PlantedConfig::default()
            };
            run::write_planted(&a.out, &cfg).map(|files| {
                println!("{}", files.config.display());
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({"kind": e.kind(), "message": e.to_string()});
            eprintln!("{record}");
            ExitCode::from(match e {
                lens_core::Error::Config(_)
                | lens_core::Error::Schedule(_)
                | lens_core::Error::MissingArtifact(_) => 2,
                lens_core::Error::Locked(_) => 3,
                _ => 1,
            })
        }
    }
}
