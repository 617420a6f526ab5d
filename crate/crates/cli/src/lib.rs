//! Subcommands of the `etvalloc` binary.
//!
//! Every subcommand reads and writes the CSV formats of [`etvalloc::io`].
//! Randomness comes from one root seed (`--seed`, else the config's
//! `generator.seed`), so the chain
//! `gen-data -> train -> predict -> evaluate` reproduces
//! [`etvalloc::sim::run_experiment`] row for row.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use etvalloc::alloc::{allocate, parse_priority, Strategy};
use etvalloc::etvmodel::{
    load_checkpoint, predict_etv_threaded, save_checkpoint, train, write_train_log, Checkpoint, LossKind,
};
use etvalloc::io::{self, OBSERVATIONS_FILE};
use etvalloc::sim::{
    evaluate_etv, fill_objective_ratio, generate, run_bench, score_plan, train_config_for, write_bench_csv,
    write_loss_plot_csv, write_reports_csv, write_reports_json, BenchConfig, ExperimentConfig, MetricsReport,
    OutcomeGrid, Scoring, TruthGrid, World,
};
use etvalloc::{validate_plan, Error};
use serde::{Deserialize, Serialize};

/// Caps worker threads for prediction.
pub const THREADS_ENV: &str = "ETVALLOC_THREADS";
/// Evaluation population, below the `gen-data` output directory.
pub const EVAL_DIR: &str = "eval";
pub const TRUTH_FILE: &str = "truth.json";
pub const LOSS_PLOT_FILE: &str = "fig_loss.csv";
pub const BENCH_PLOT_FILE: &str = "fig_scaling.csv";

#[derive(Debug, Parser)]
#[command(name = "etvalloc", version, about = "ETV estimation and risk-constrained fund allocation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic history set, evaluation set and ground truth.
    GenData(GenDataArgs),
    /// Fit a model on observations and write a checkpoint and training log.
    Train(TrainArgs),
    /// Write the ETV matrix of a checkpoint over an instance.
    Predict(PredictArgs),
    /// Allocate users to funds and write the plan.
    Allocate(AllocateArgs),
    /// Score ETV predictions and plans against simulated outcomes.
    Evaluate(EvaluateArgs),
    /// Time HA against exact over a ladder of instance sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Root seed; overrides the config's generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON config file (generator and training overrides).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory holding users.csv and funds.csv.
    #[arg(long)]
    pub instance: PathBuf,
    /// Observations CSV; defaults to observations.csv in the instance directory.
    #[arg(long)]
    pub obs: Option<PathBuf>,
    /// Checkpoint to write; the epoch log goes next to it as `<stem>.log.csv`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "esj")]
    pub loss: LossKind,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// ETV matrix CSV to write.
    #[arg(long)]
    pub etv: PathBuf,
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub etv: PathBuf,
    /// Plan CSV to write.
    #[arg(long)]
    pub plan: PathBuf,
    /// ha, exact, manual or greedy.
    #[arg(long, default_value = "ha")]
    pub strategy: Strategy,
    /// Fund priority for `manual`, e.g. `2,0,1`.
    #[arg(long)]
    pub priority: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Evaluation instance directory.
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub etv: PathBuf,
    /// Outcome grid; defaults to observations.csv in the instance directory.
    #[arg(long)]
    pub obs: Option<PathBuf>,
    /// Ground truth written by gen-data; defaults to truth.json beside the instance directory.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Score this plan instead of allocating; `--strategy` then names it.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Comma-separated strategies to allocate with.
    #[arg(long, default_value = "ha")]
    pub strategy: String,
    /// Loss the ETV matrix was trained with (report label).
    #[arg(long, default_value = "esj")]
    pub loss: LossKind,
    /// Report to write; `.json` selects JSON, anything else CSV.
    #[arg(long)]
    pub report: PathBuf,
    /// Directory for figure CSVs.
    #[arg(long)]
    pub emit_plot_data: Option<PathBuf>,
    /// Fill `runtime_ms` (breaks byte-identical reports).
    #[arg(long)]
    pub record_runtime: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated instance sizes, overriding the config.
    #[arg(long)]
    pub sizes: Option<String>,
    /// Report to write; `.json` selects JSON, anything else CSV.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub emit_plot_data: Option<PathBuf>,
}

/// Ground truth of a generated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub seed: u64,
    pub world: World,
    pub evaluation: TruthGrid,
}

/// Process exit code for an error: 2 infeasible, 3 numeric, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_infeasible() {
        2
    } else if err.is_numeric() {
        3
    } else {
        1
    }
}

pub fn run(cli: Cli) -> etvalloc::Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => predict(&a),
        Command::Allocate(a) => cmd_allocate(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Bench(a) => bench(&a),
    }
}

fn require(path: &Path) -> etvalloc::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("input path {} does not exist", path.display())))
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> etvalloc::Result<T> {
    require(path)?;
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Config file (or defaults) with `--seed` applied to the generator.
fn experiment_config(common: &Common) -> etvalloc::Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &common.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.generator.seed = seed;
    }
    cfg.generator.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

fn threads(config_threads: usize) -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0);
    match cap {
        Some(n) => n,
        None if config_threads > 0 => config_threads,
        None => available,
    }
}

fn create(path: &Path) -> etvalloc::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn read_observations(path: &Path) -> etvalloc::Result<Vec<etvalloc::Observation>> {
    require(path)?;
    io::read_observations(File::open(path)?)
}

fn read_instance(dir: &Path) -> etvalloc::Result<etvalloc::Instance> {
    require(dir)?;
    io::read_instance(dir)
}

fn read_etv(path: &Path) -> etvalloc::Result<etvalloc::EtvMatrix> {
    require(path)?;
    io::read_etv(File::open(path)?)
}

fn gen_data(a: &GenDataArgs) -> etvalloc::Result<()> {
    let cfg = experiment_config(&a.common)?;
    let data = generate(&cfg.generator)?;
    let eval_dir = a.out.join(EVAL_DIR);
    fs::create_dir_all(&eval_dir)?;
    io::write_instance(&a.out, &data.history.instance)?;
    io::write_observations(create(&a.out.join(OBSERVATIONS_FILE))?, &data.history.observations)?;
    io::write_instance(&eval_dir, &data.evaluation.instance)?;
    io::write_observations(create(&eval_dir.join(OBSERVATIONS_FILE))?, &data.evaluation.observations)?;
    let truth = TruthFile { seed: cfg.generator.seed, world: data.world, evaluation: data.evaluation.truth };
    let mut w = create(&a.out.join(TRUTH_FILE))?;
    serde_json::to_writer(&mut w, &truth)?;
    Ok(())
}

/// `model.json` -> `model.log.csv`
pub fn log_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    model.with_file_name(format!("{stem}.log.csv"))
}

fn cmd_train(a: &TrainArgs) -> etvalloc::Result<()> {
    let cfg = experiment_config(&a.common)?;
    let instance = read_instance(&a.instance)?;
    let obs = read_observations(&a.obs.clone().unwrap_or_else(|| a.instance.join(OBSERVATIONS_FILE)))?;
    let train_cfg = train_config_for(cfg.generator.seed, &cfg.train, a.loss);
    let trained = train(&instance, &obs, &train_cfg)?;
    let checkpoint = Checkpoint { seed: cfg.generator.seed, config: train_cfg, model: trained.model };
    if let Some(dir) = a.model.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint(&a.model, &checkpoint)?;
    write_train_log(create(&log_path(&a.model))?, &trained.log)
}

fn predict(a: &PredictArgs) -> etvalloc::Result<()> {
    let cfg = experiment_config(&a.common)?;
    let instance = read_instance(&a.instance)?;
    require(&a.model)?;
    let checkpoint = load_checkpoint(&a.model)?;
    let etv = predict_etv_threaded(&checkpoint.model, &instance, threads(cfg.threads))?;
    io::write_etv(create(&a.etv)?, &etv)
}

fn cmd_allocate(a: &AllocateArgs) -> etvalloc::Result<()> {
    let instance = read_instance(&a.instance)?;
    let etv = read_etv(&a.etv)?;
    let strategy = match (&a.strategy, &a.priority) {
        (Strategy::Manual(_), Some(p)) => Strategy::Manual(Some(parse_priority(p)?)),
        (_, Some(_)) => return Err(Error::Config("--priority only applies to the manual strategy".into())),
        (s, None) => s.clone(),
    };
    let plan = allocate(&strategy, &instance, &etv)?;
    validate_plan(&instance, &plan).map_err(Error::Validation)?;
    io::write_plan(create(&a.plan)?, &plan)
}

fn parse_strategies(list: &str) -> etvalloc::Result<Vec<Strategy>> {
    list.split(',').map(|s| s.trim().parse()).collect()
}

fn write_reports(path: &Path, reports: &[MetricsReport]) -> etvalloc::Result<()> {
    let w = create(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        write_reports_json(w, reports)
    } else {
        write_reports_csv(w, reports)
    }
}

fn evaluate(a: &EvaluateArgs) -> etvalloc::Result<()> {
    let cfg = experiment_config(&a.common)?;
    let instance = read_instance(&a.instance)?;
    let etv = read_etv(&a.etv)?;
    etv.check_matches(&instance)?;
    let obs = read_observations(&a.obs.clone().unwrap_or_else(|| a.instance.join(OBSERVATIONS_FILE)))?;
    let outcomes = OutcomeGrid::from_observations(instance.n_users(), instance.n_funds(), &obs)?;
    let truth_path = match &a.truth {
        Some(p) => p.clone(),
        None => a.instance.parent().unwrap_or(Path::new(".")).join(TRUTH_FILE),
    };
    let truth: TruthFile = read_json(&truth_path)?;
    let true_etv = truth.evaluation.etv()?;
    true_etv.check_matches(&instance)?;
    let seed = a.common.seed.unwrap_or(if a.common.config.is_some() { cfg.generator.seed } else { truth.seed });
    let ctx = Scoring { seed, loss: a.loss, instance: &instance, etv: &etv, true_etv: &true_etv, outcomes: &outcomes };
    let strategies = parse_strategies(&a.strategy)?;
    let reports = match &a.plan {
        Some(plan_path) => {
            let [strategy] = strategies.as_slice() else {
                return Err(Error::Config("--plan takes exactly one --strategy label".into()));
            };
            require(plan_path)?;
            let plan = io::read_plan(File::open(plan_path)?)?;
            let mut rows = vec![score_plan(&ctx, strategy.name(), &plan, 0)?];
            fill_objective_ratio(&mut rows);
            rows
        }
        None => evaluate_etv(&ctx, &strategies, a.record_runtime)?,
    };
    write_reports(&a.report, &reports)?;
    if let Some(dir) = &a.emit_plot_data {
        write_loss_plot_csv(create(&dir.join(LOSS_PLOT_FILE))?, &reports)?;
    }
    Ok(())
}

fn bench(a: &BenchArgs) -> etvalloc::Result<()> {
    let mut cfg: BenchConfig = match &a.common.config {
        Some(p) => read_json(p)?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = a.common.seed {
        cfg.generator.seed = seed;
    }
    if let Some(sizes) = &a.sizes {
        cfg.sizes = sizes
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Parse(format!("bad size {s:?}"))))
            .collect::<etvalloc::Result<_>>()?;
    }
    let rows = run_bench(&cfg)?;
    let w = create(&a.report)?;
    if a.report.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let mut w = w;
        serde_json::to_writer_pretty(&mut w, &rows)?;
    } else {
        write_bench_csv(w, &rows)?;
    }
    if let Some(dir) = &a.emit_plot_data {
        write_bench_csv(create(&dir.join(BENCH_PLOT_FILE))?, &rows)?;
    }
    Ok(())
}
