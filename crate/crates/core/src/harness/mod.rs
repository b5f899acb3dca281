//! Experiment orchestration: config files, per-seed checkpointed stages,
//! the full pipeline, ablation sweeps, reports and the model registry.
//!
//! Layout under the output directory:
//!
//! ```text
//! <output_dir>/<config hash, 16 hex>/
//!     registry.json
//!     <seed>/data/dataset.{json,bin}
//!     <seed>/<stage>/artifact.json     stage result, reloaded on resume
//!     <seed>/<stage>/checkpoint.json   standalone network checkpoint
//! ```
//!
//! `checkpoint.json` holds one network with these fields:
//! - `format`: `"intervene-checkpoint"`
//! - `version`: checkpoint schema version
//! - `scalar`: `"f64"`
//! - `layers`: layer specs in order, each with its parameters
//!   (affine weight `out x in` and bias, batchnorm gamma, beta and running
//!   statistics, dropout rate)
//! - `mode`: `train` or `eval`
//! - `slice_index`: layer index where the body ends and the head begins
//! - `seeds.dataset_seed`: the run seed the dataset was generated from
//! - `seeds.model_seed`: the stage seed derived from the run seed
//! - `seeds.derived`: named extra seeds; `config` is the run's config hash prefix
//! - `metadata.stage`, `metadata.family`, `metadata.hyperparameters`
//!
//! `artifact.json` additionally carries training logs and, for fine-tuned
//! models, provenance linking back to the base black box.

mod artifacts;
mod config;
mod pipeline;
mod registry;
mod report;
mod stages;

pub use artifacts::{family_stages, SeedArtifacts, TrainedModel};
pub use config::{DatasetSpec, ExperimentConfig, Family, Grids, HyperSet, CONFIG_SCHEMA_VERSION};
pub use pipeline::{
    edit_stat, evaluate_family, run_ablation, run_pipeline, AblationAxis, CurveRow, EditStat, ResultsBundle, Scores, SeedResult,
    StageFailure, TableRow, BUNDLE_SCHEMA_VERSION, DEFAULT_LABEL,
};
pub use registry::{
    dataset_id, find_run_dir, load_dataset, load_model, model_id, write_registry_with, DatasetEntry, ModelEntry, Registry,
    REGISTRY_FILE, REGISTRY_SCHEMA_VERSION,
};
pub use report::{
    emit_report, load_bundle, save_bundle, summarize, CurveSummary, EditStatSummary, ReportFiles, Summary, TableSummary,
    CURVES_CSV, EDIT_STATS_CSV, SUMMARY_JSON, TABLE_CSV,
};
pub use stages::{stage_seed, StageCache, ARTIFACT_FILE};
