//! End-to-end runs: generate, train one model per loss, allocate, score.

use std::io::Write;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::alloc::{allocate_timed, Strategy};
use crate::error::{Error, Result};
use crate::etvmodel::{predict_etv_threaded, train, EsjModel, LossKind, TrainConfig};
use crate::problem::{objective, validate_plan, AllocationPlan, EtvMatrix, Instance};
use crate::seed::{self, stage};
use crate::sim::generator::{allocation_instance, generate, GeneratorConfig};
use crate::sim::metrics::{delivered, entire_space_mse, metrics_delivery, metrics_thc_tha, OutcomeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    /// Template; `seed` and `loss_kind` are set per run.
    pub train: TrainConfig,
    /// Wall-clock columns break byte-for-byte reproducibility, so they are
    /// zero unless requested.
    pub record_runtime: bool,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { generator: GeneratorConfig::default(), train: TrainConfig::default(), record_runtime: false, threads: 1 }
    }
}

/// Training configuration for one loss under a root seed.
pub fn train_config_for(root_seed: u64, template: &TrainConfig, loss_kind: LossKind) -> TrainConfig {
    TrainConfig { seed: seed::derive(root_seed, stage::TRAIN), loss_kind, ..template.clone() }
}

/// One (loss, strategy) cell of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub n_users: usize,
    pub loss: LossKind,
    pub strategy: String,
    /// Argmax-ETV hits, ignoring demand.
    pub thc: u64,
    pub tha: f64,
    /// Delivery metrics of the constrained plan.
    pub cpmd: f64,
    pub tapmd: f64,
    /// Plan value under the predicted ETV.
    pub objective: f64,
    /// Plan value under the true ETV.
    pub true_objective: f64,
    /// `objective / objective(exact)` when exact ran in the same experiment.
    pub objective_ratio: Option<f64>,
    /// `ln(1 + ETV)` against realized log-amounts over every evaluation pair.
    pub etv_mse: f64,
    pub runtime_ms: u64,
}

pub const REPORT_HEADER: [&str; 13] = [
    "seed",
    "n_users",
    "loss",
    "strategy",
    "thc",
    "tha",
    "cpmd",
    "tapmd",
    "objective",
    "true_objective",
    "objective_ratio",
    "etv_mse",
    "runtime_ms",
];

/// Everything learned and scored for one loss.
#[derive(Debug, Clone)]
pub struct LossRun {
    pub loss: LossKind,
    pub model: EsjModel,
    pub etv: EtvMatrix,
}

fn millis(d: Duration, record: bool) -> u64 {
    if record {
        d.as_millis() as u64
    } else {
        0
    }
}

/// Evaluation-set inputs shared by every scored plan.
#[derive(Debug, Clone, Copy)]
pub struct Scoring<'a> {
    pub seed: u64,
    pub loss: LossKind,
    pub instance: &'a Instance,
    pub etv: &'a EtvMatrix,
    pub true_etv: &'a EtvMatrix,
    pub outcomes: &'a OutcomeGrid,
}

/// Report row for one validated plan. `objective_ratio` is left empty.
pub fn score_plan(ctx: &Scoring<'_>, strategy: &str, plan: &AllocationPlan, runtime_ms: u64) -> Result<MetricsReport> {
    validate_plan(ctx.instance, plan).map_err(Error::Validation)?;
    let (thc, tha) = metrics_thc_tha(ctx.etv, ctx.outcomes)?;
    let (cpmd, tapmd) = metrics_delivery(&delivered(plan, ctx.outcomes)?)?;
    Ok(MetricsReport {
        seed: ctx.seed,
        n_users: ctx.instance.n_users(),
        loss: ctx.loss,
        strategy: strategy.to_string(),
        thc,
        tha,
        cpmd,
        tapmd,
        objective: objective(ctx.etv, plan)?,
        true_objective: objective(ctx.true_etv, plan)?,
        objective_ratio: None,
        etv_mse: entire_space_mse(ctx.etv, ctx.outcomes)?,
        runtime_ms,
    })
}

/// Fills `objective_ratio` against the exact row, if there is one.
pub fn fill_objective_ratio(rows: &mut [MetricsReport]) {
    if let Some(exact) = rows.iter().find(|r| r.strategy == "exact").map(|r| r.objective) {
        for r in rows {
            r.objective_ratio = Some(if exact > 0.0 { r.objective / exact } else { 1.0 });
        }
    }
}

/// Scores one predicted ETV matrix under every strategy.
pub fn evaluate_etv(ctx: &Scoring<'_>, strategies: &[Strategy], record_runtime: bool) -> Result<Vec<MetricsReport>> {
    let mut rows = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let (plan, elapsed) = allocate_timed(strategy, ctx.instance, ctx.etv)?;
        rows.push(score_plan(ctx, strategy.name(), &plan, millis(elapsed, record_runtime))?);
    }
    fill_objective_ratio(&mut rows);
    Ok(rows)
}

/// Generates data from `config.generator.seed`, trains one model per loss on
/// the history population and scores each strategy on the evaluation one.
pub fn run_experiment(
    config: &ExperimentConfig,
    strategies: &[Strategy],
    loss_kinds: &[LossKind],
) -> Result<(Vec<MetricsReport>, Vec<LossRun>)> {
    let root = config.generator.seed;
    let data = generate(&config.generator)?;
    let eval = &data.evaluation;
    let outcomes =
        OutcomeGrid::from_observations(eval.instance.n_users(), eval.instance.n_funds(), &eval.observations)?;
    let true_etv = eval.truth.etv()?;
    let mut reports = Vec::new();
    let mut runs = Vec::new();
    for &loss in loss_kinds {
        let cfg = train_config_for(root, &config.train, loss);
        let model = train(&data.history.instance, &data.history.observations, &cfg)?.model;
        let etv = predict_etv_threaded(&model, &eval.instance, config.threads)?;
        let ctx =
            Scoring { seed: root, loss, instance: &eval.instance, etv: &etv, true_etv: &true_etv, outcomes: &outcomes };
        reports.extend(evaluate_etv(&ctx, strategies, config.record_runtime)?);
        runs.push(LossRun { loss, model, etv });
    }
    Ok((reports, runs))
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub fn write_reports_csv<W: Write>(w: W, reports: &[MetricsReport]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(REPORT_HEADER)?;
    for r in reports {
        out.write_record([
            r.seed.to_string(),
            r.n_users.to_string(),
            r.loss.name().to_string(),
            r.strategy.clone(),
            r.thc.to_string(),
            r.tha.to_string(),
            r.cpmd.to_string(),
            r.tapmd.to_string(),
            r.objective.to_string(),
            r.true_objective.to_string(),
            opt(r.objective_ratio),
            r.etv_mse.to_string(),
            r.runtime_ms.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_reports_json<W: Write>(mut w: W, reports: &[MetricsReport]) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, reports)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Bars per loss: argmax THC and THA.
pub fn write_loss_plot_csv<W: Write>(w: W, reports: &[MetricsReport]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(["seed", "loss", "thc", "tha", "etv_mse"])?;
    let mut seen = std::collections::BTreeSet::new();
    for r in reports {
        if seen.insert((r.seed, r.loss.name())) {
            out.write_record([
                r.seed.to_string(),
                r.loss.name().into(),
                r.thc.to_string(),
                r.tha.to_string(),
                r.etv_mse.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub generator: GeneratorConfig,
    pub sizes: Vec<usize>,
    /// Exact is skipped above this many users.
    pub exact_cutoff: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig { history_users: 0, ..GeneratorConfig::default() },
            sizes: vec![2_000, 10_000, 50_000, 200_000],
            exact_cutoff: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n_users: usize,
    pub strategy: String,
    pub objective: f64,
    pub runtime_ms: f64,
    pub objective_ratio: Option<f64>,
}

/// HA and exact on the true ETV of synthetic instances of each size.
/// Each allocation is timed on its own thread.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in &config.sizes {
        let gen = GeneratorConfig { n_users: n, history_users: 0, ..config.generator.clone() };
        let (instance, etv) = allocation_instance(&gen)?;
        let timed = |s: Strategy| -> Result<(f64, Duration)> {
            let (plan, elapsed) = std::thread::scope(|scope| {
                scope.spawn(|| allocate_timed(&s, &instance, &etv)).join().expect("allocation thread panicked")
            })?;
            Ok((objective(&etv, &plan)?, elapsed))
        };
        let (ha_obj, ha_time) = timed(Strategy::Ha)?;
        let exact = if n <= config.exact_cutoff { Some(timed(Strategy::Exact)?) } else { None };
        let ratio = exact.map(|(e, _)| if e > 0.0 { ha_obj / e } else { 1.0 });
        rows.push(BenchRow {
            n_users: n,
            strategy: "ha".into(),
            objective: ha_obj,
            runtime_ms: ha_time.as_secs_f64() * 1e3,
            objective_ratio: ratio,
        });
        if let Some((e, t)) = exact {
            rows.push(BenchRow {
                n_users: n,
                strategy: "exact".into(),
                objective: e,
                runtime_ms: t.as_secs_f64() * 1e3,
                objective_ratio: Some(1.0),
            });
        }
    }
    Ok(rows)
}

/// Objective and runtime against N.
pub fn write_bench_csv<W: Write>(w: W, rows: &[BenchRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    out.write_record(["n_users", "strategy", "objective", "runtime_ms", "objective_ratio"])?;
    for r in rows {
        out.write_record([
            r.n_users.to_string(),
            r.strategy.clone(),
            r.objective.to_string(),
            r.runtime_ms.to_string(),
            opt(r.objective_ratio),
        ])?;
    }
    out.flush()?;
    Ok(())
}
