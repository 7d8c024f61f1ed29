//! Benchmark harness: problem generators, the experiment runner and the
//! CSV/JSON result formats.

pub mod generators;
pub mod records;
pub mod runner;

pub use generators::{gen_box, gen_nnls, gen_simplex, gen_stiefel, GENERATOR_NAME};
pub use records::{
    parse_csv, parse_summary_json, write_csv, write_summary_json, BenchRecord, ExperimentSummary,
    Geometry, InnerId, MethodId, MethodSummary, RunSummary, CSV_HEADER,
};
pub use runner::{run_experiment, run_single, ExperimentOutput, ExperimentSpec, TIME_TO_TOL};
