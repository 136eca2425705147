//! Dataset ingestion, experiment grids, reports and figures.

mod config;
mod dataset;
mod figures;
mod font;
mod report;
mod runner;

pub use config::{CodecEntry, ExperimentConfig};
pub use dataset::{fit_to_stride, list_pngs, load_dataset, CropInfo, NamedImage, OnError};
pub use figures::{delta_visualization, emit_figures, FigureSummary, COLUMNS};
pub use report::{
    aggregate, Aggregate, CellFailure, CodecInfo, ExperimentSummary, IcRow, IcTable, QualityReport, ReportRow,
    EVALUATION_NOTE, REPORT_SCHEMA_VERSION,
};
pub use runner::{
    check_feasibility, compare_ic, run_experiment, write_attack_artifacts, write_json_atomic, CellKey, CellRecord,
};
