//! Scoring, synthetic data, and the experiment harness comparing training
//! modes and inference strategies.

mod bleu;
mod config;
mod experiment;
mod synthetic;

pub use bleu::{corpus_bleu, BleuReport, MAX_ORDER};
pub use config::ExperimentConfig;
pub use experiment::{
    run_datasize_sweep, run_datasize_sweep_with_progress, run_experiment, run_strategy_comparison, CellSummary,
    ExperimentResults, ExperimentSpec, RunRecord, SweepTable, System, TSV_HEADER,
};
pub use synthetic::{generate_sweep_data, generate_task, Grammar, SyntheticTask, TaskData, CONSONANTS, VOWELS};
