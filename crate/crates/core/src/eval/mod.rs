//! Scores, voting, experiment orchestration, embedding export and plots.

mod experiment;
mod export;
mod metrics;
mod plot;

pub use experiment::{
    append_result, estimate_relationship, evaluate_units, read_results, read_summary, run_experiment, run_seed, summarize,
    target_temperature, train_run, write_summary, ExperimentOutcome, Layout, ResultRow, RunOptions, SummaryRow, TrainedRun,
    RESULTS_SCHEMA,
};
pub use metrics::{average_score, compute_metrics, harmonic_score, majority_vote, ConfusionMatrix, Metrics, MetricsReport, PositiveClassScores};
pub use export::{export_embeddings, write_embeddings, EmbeddingRow};
pub use plot::{emit_plots, PlotFile};
