//! Run logs, summary indicators, configuration loading and ablation grids.

pub mod ablation;
pub mod config;
pub mod indicators;
pub mod runlog;

pub use ablation::{run_ablation, AblationReport, CellResult, CellSpec, ExperimentSpec};
pub use config::{load_config, parse_config};
pub use indicators::{compute_indicators, gdp_gap_reduction_pct, years_extension_pct, IndicatorSummary};
pub use runlog::{read_run_log, rows_from_record, rows_from_stats, write_run_log, GiniMode, RunLogRow, RunLogWriter};
