//! End-to-end runs: configuration, the certify pipeline, label-randomization
//! sweeps and report rendering.

mod certify;
mod config;
mod emit;
mod sweep;

pub use certify::{
    masks_of, run_certify_pipeline, stage_certify, stage_prune, stage_quantize, stage_train, Artifacts, CertifySummary,
    CONFIG_FILE, MODEL_FILE, PRUNED_FILE, REPORT_FILE, SUMMARY_FILE, TRIPLET_FILE,
};
pub use config::{
    resolve_arch, BoundSpec, DataSpec, EvalSpec, PipelineConfig, PruneSpec, Splits, SweepConfig, DEFAULT_DATA_DIR,
};
pub use emit::{report_emit, ReportFormat, ReportInput};
pub use sweep::{run_randomization_sweep, SweepCell, SweepResult, SweepRun};
