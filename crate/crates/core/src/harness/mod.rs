//! Brute-force oracles, deterministic validation suites and Monte-Carlo experiments.

pub mod experiments;
pub mod oracle;
pub mod report;
pub mod stats;
pub mod suites;

pub use experiments::{run_experiment, ExperimentKind, ExperimentParams};
pub use oracle::{brute_force, brute_force_permuted, OracleResult};
pub use report::{Check, DecayReport, GofReport, Report};
pub use suites::{suite_covariance_laws, suite_identities, suite_inference_vs_oracle, IdentityTrials};
