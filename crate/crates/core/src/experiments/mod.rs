//! Monte-Carlo sweeps, convergence traces and approximation audits, with
//! their CSV and JSON writers.

mod config;
mod output;
mod runner;

pub use config::{dbm_to_watts, parse_schemes, ExperimentConfig, Scheme, Sweep, SweepAxis};
pub use output::{
    fmt_sig, output_paths, write_audit_csv, write_metadata, write_results_csv, write_trace_csv, Metadata, ASSUMPTIONS,
    TOOLKIT_VERSION,
};
pub use runner::{
    draw_geometry, run_approximation_audit, run_convergence_trace, run_monte_carlo, AuditRecord, BteTrace,
    ConvergenceTrace, GeometryRecord, MonteCarloOutput, SkippedPoint, TrialResult,
};
