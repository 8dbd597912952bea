//! Grid sweeps over pretraining settings, noisy-versus-mere-exposure deltas
//! and the tables and plots summarising them.

mod deltas;
mod record;
mod report;
mod sweep;

pub use deltas::{compute_deltas, mean_std, DeltaCell, DeltaReport, LossStats};
pub use record::{CellKey, ExperimentRecord, FailureRecord};
pub use report::{delta_plot, f1_plot, records_csv, render_report, summarize, SummaryRow, REPORT_DIR};
pub use sweep::{
    cell_dir, collect_run, ensure_vts_datasets, read_records, run_sweep, vts_dataset_dir, CellOutcome, CellRunner,
    DataLocator, SweepGrid, CELL_CONFIG_FILE, SweepSummary, TrainingRunner, CELLS_DIR, DEFAULT_R_IMG, DEFAULT_R_PAIRS, FAILURES_FILE,
    FAILURE_FILE, RECORDS_FILE, RECORD_FILE,
};
