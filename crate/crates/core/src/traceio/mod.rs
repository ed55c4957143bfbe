//! Trace data model: metric schema, degradation labels, neighbour
//! aggregation and the dataset directory format.

mod io;
mod label;
mod record;
mod schema;

pub use io::{
    read_dataset, read_run, read_schema, run_dir, validate_dataset, write_dataset, write_run,
    write_schema, APPS_FILE, META_FILE, RUNS_DIR, SCHEMA_FILE, TRACE_FILE,
};
pub(crate) use io::fmt_f64;
pub use label::{compute_label, Direction, PerfMetricKind};
pub use record::{aggregate_neighbors, AppClass, Matrix, RunRecord, Scenario, TraceDataset};
pub use schema::{MetricCategory, MetricSchema, NEIGHBOR_PREFIX};
