//! Experiment orchestration: configuration, the end-to-end pipeline, and
//! the compression sweep.

pub mod config;
pub mod pipeline;
pub mod sweep;

pub use config::{ExperimentConfig, InputKind, CONFIG_SCHEMA};
pub use pipeline::{
    ground_truth_spectrum, read_spectrum_csv, run_pipeline, write_spectrum_csv,
    STREAM_ACQUISITION, STREAM_RASTER,
};
pub use sweep::{
    compare_orderings, read_sweep_csv, sweep_ratios, write_comparison_csv, write_sweep_csv,
    OrderingComparison, SweepPoint,
};
