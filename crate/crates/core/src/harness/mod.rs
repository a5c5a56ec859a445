//! Training runs, fraction sweeps and their reports.

mod config;
mod report;
mod sweep;
mod train;

pub use config::{Architecture, DataPaths, Method, MethodLabel, RunConfig, DATA_DIR_ENV};
pub use report::{parse_csv, to_csv, to_markdown, write_report, CsvRow, ReportFormat};
pub use sweep::{run_sweep, CellResult, RunRecord, SweepResult, SweepSpec};
pub use train::{score_dataset, train, train_on, Mnist, RunOutcome};
