//! Synthetic ground truth, evaluation metrics and experiment runs.

mod experiment;
mod generator;
mod metrics;

pub use experiment::{
    evaluate_etv, fill_objective_ratio, run_bench, run_experiment, score_plan, train_config_for, write_bench_csv,
    write_loss_plot_csv, write_reports_csv, write_reports_json, BenchConfig, BenchRow, ExperimentConfig, LossRun,
    MetricsReport, Scoring, REPORT_HEADER,
};
pub use generator::{
    allocation_instance, feasible_demands, generate, largest_remainder, Dataset, Generated, GeneratorConfig, TrueModel,
    TruthGrid, World, MIN_LOG_AMOUNT, MIN_SIGMA_TRUE,
};
pub use metrics::{
    argmax_assignment, auc, delivered, entire_space_mse, metrics_delivery, metrics_thc_tha, OutcomeGrid,
};
