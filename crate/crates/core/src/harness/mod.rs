//! Per-scene optimization runs with any optimizer, multi-scene comparisons
//! with time-to-threshold tables, and parameter-group swap studies. Results
//! are CSV files; plots are a convenience.
//!
//! Per-run CSV columns: `iter, wall_ms, psnr_context, psnr_target,
//! ssim_context, ssim_target`. Every column except `wall_ms` is bit-for-bit
//! reproducible for a fixed seed.

mod compare;
mod config;
mod plot;
mod rules;
mod run;

pub use compare::{
    compare, crossing, mean_curve, threshold_table, write_report, CompareReport, MethodCurve, ThresholdRow, NEVER,
};
pub use config::{load_toml, CompareConfig, MethodSpec, OptimizerChoice, RunConfig, ViewsPolicy, DEFAULT_CADENCE};
pub use plot::{line_chart, series_color, Series};
pub use rules::{build_rule, Adam, Freeze, Learned, LoadedModel, Sgd, Swap, UpdateRule};
pub use run::{evaluate, optimize_scene, optimize_with_rule, read_rows, swap_study, write_rows, EvalRow, RunOutcome};
