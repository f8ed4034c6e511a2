//! Config-driven sweeps over methods, topologies and seeds.

mod compare;
mod execute;
mod suite;

pub use compare::{compare, compare_file, Assertion, CompareReport, CompareSpec, Op, Outcome, SummarySet};
pub use execute::{
    execute_suite, resolve_output_dir, EntrySummary, ExecuteOptions, SeedFailure, Status, Summary, SuiteOutcome,
    OUT_DIR_ENV, SUMMARY_SCHEMA_VERSION,
};
pub use suite::{bundled_names, bundled_suite, load_suite, ExperimentSuite, SuiteEntry};
