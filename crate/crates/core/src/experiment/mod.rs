//! Experiment orchestration: JSON configs, the design / calibration /
//! adaptive pipelines writing one directory per run, and the comparison and
//! diagnostic reports read back from those directories.

mod config;
mod report;
mod run;

pub use config::{
    BuiltinModel, CsvObservations, DomainSpec, ExperimentConfig, ModelSpec, ObservationSpec, PriorSpec, Strategy,
    SyntheticSpec, CONFIG_VERSION,
};
pub use report::{cmd_compare, cmd_diagnose, compare_markdown, CompareRow, RunReport};
pub use run::{
    cmd_adaptive, cmd_calibrate, cmd_design, read_observations_csv, write_observations_csv, DesignReport,
    Experiment, Q2Entry, RunDiagnostics, AUDIT_FILE, CHECKPOINT_FILE, CONFIG_FILE, DESIGN_FILE, DESIGN_META_FILE,
    DIAGNOSTICS_FILE, OBSERVATIONS_FILE, POSTERIOR_FILE,
};
