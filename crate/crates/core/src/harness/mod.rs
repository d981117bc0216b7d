//! Everything the CLI drives: JSONL datasets, key=value configuration, the
//! three positioning pipelines, error metrics and CSV plot data.

pub mod config;
pub mod dataset;
pub mod metrics;
pub mod pipeline;
pub mod plot;

pub use config::{KeyValues, RunOptions};
pub use dataset::{load_dataset, write_dataset, Dataset, DatasetMeta};
pub use metrics::{compute_metrics, epoch_errors, EvalWindow};
pub use pipeline::{run_pipeline, Method, RunReport};
pub use plot::{emit_plot_data, gp_grid, GridCell, GridSpec};
