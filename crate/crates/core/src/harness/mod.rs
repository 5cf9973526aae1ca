//! Config-driven experiments: datasets, pipelines, multi-seed runs and
//! report files.

mod config;
mod data;
mod pipeline;
pub mod presets;
mod report;

pub use config::{DensityObjective, ExperimentConfig, ModelFamily, PipelineKind, SplitFractions};

pub use data::{
    dataset_from_bytes, dataset_to_bytes, ingest_dataset, make_gaussian_mixture, make_synthetic_din, read_dataset_csv,
    save_dataset, split_dataset, write_dataset_csv, Dataset, DatasetSource, DatasetSpec, Generator,
};

pub use pipeline::{
    calibrate_model, derive_seed, evaluate, finetune_oe, load_model, prepare_data, run_seed, save_model,
    train_baseline, train_scratch_oe, CalibrationRow, ModelMeta, ResultRow, ScoredRow, SeedData, SeedResult,
    TrainedModel, MODEL_FILE, MODEL_META_FILE,
};
pub use report::{
    emit_reports, render_percent, render_table, run_experiment, run_seeds, run_seeds_with, summarize,
    summarize_calibration, CalibrationSummaryRow, ExperimentOutcome, SummaryRow,
};
