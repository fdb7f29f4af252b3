//! Config parsing, the (λ, seed) experiment grid and report emission.

pub mod config;
pub mod report;
pub mod run;
pub mod stages;

pub use config::{parse_config, ExperimentConfig, OutputFormat, StudentShape};
pub use report::{
    mean_std, paired_differences, read_report_csv, summarize, write_report_csv, GeometryRow, MeanStd, PairedRow,
    ReportRow, SummaryRow, REPORT_HEADER,
};
pub use run::{
    compute_grid, prepare_seed, run_cell, run_experiment, write_outputs, CellResult, RunOutput, SeedData,
};
