//! Run configuration, training orchestration, evaluation, CSV metrics and SVG plots.

mod ablation;
mod config;
mod eval;
mod plot;
mod run;

pub use ablation::{ablation_suite, normalize_to_reference, variants, Variant, VariantResult, SUMMARY_FILE};
pub use config::{parse_config, parse_overrides, RunConfig, CONFIG_KEYS, DEFAULT_ENV};
pub use eval::evaluate;
pub use plot::{emit_plot, render_svg, CsvTable};
pub use run::{
    run_training, MetricsRow, RunSummary, CHECKPOINT_FILE, CONFIG_FILE, CSV_HEADER, DIVERGED_MARKER, METRICS_FILE,
};
