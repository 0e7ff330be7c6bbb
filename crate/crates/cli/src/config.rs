//! Layered configuration: per-experiment defaults, then an optional JSON
//! file, then command-line flags or `ISING_FACTOR_*` environment variables.

use std::path::{Path, PathBuf};

use clap::Args;
use ising_factor::harness::{ExperimentKind, ExperimentParams};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Fields accepted in a JSON config file. Unknown keys are rejected.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: Option<String>,
    pub d: Option<usize>,
    pub depth: Option<usize>,
    pub beta: Option<f64>,
    pub tanh_beta: Option<f64>,
    pub gamma: Option<f64>,
    pub t: Option<f64>,
    pub dt: Option<f64>,
    pub delta_gamma: Option<f64>,
    pub replicas: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub ks_inflation: Option<f64>,
    pub ratio_point_max: Option<f64>,
    pub m_max: Option<u32>,
    pub min_trials: Option<u64>,
}

/// Overrides shared by every subcommand.
#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    /// JSON config file.
    #[arg(long, global = true, env = "ISING_FACTOR_CONFIG")]
    pub config: Option<PathBuf>,
    /// Tree degree (>= 2).
    #[arg(long, global = true, env = "ISING_FACTOR_D")]
    pub d: Option<usize>,
    /// Ball radius, or the largest radius for decay experiments.
    #[arg(long, global = true, env = "ISING_FACTOR_DEPTH")]
    pub depth: Option<usize>,
    /// Inverse temperature; give this or --tanh-beta.
    #[arg(long, global = true, env = "ISING_FACTOR_BETA")]
    pub beta: Option<f64>,
    /// tanh of the inverse temperature, in [0, 1).
    #[arg(long, global = true, env = "ISING_FACTOR_TANH_BETA")]
    pub tanh_beta: Option<f64>,
    /// Boundary coupling, in [0, beta].
    #[arg(long, global = true, env = "ISING_FACTOR_GAMMA")]
    pub gamma: Option<f64>,
    /// Final time.
    #[arg(long, global = true, env = "ISING_FACTOR_T")]
    pub t: Option<f64>,
    /// Euler-Maruyama step.
    #[arg(long, global = true, env = "ISING_FACTOR_DT")]
    pub dt: Option<f64>,
    /// Finite-difference step in the boundary coupling.
    #[arg(long, global = true, env = "ISING_FACTOR_DELTA_GAMMA")]
    pub delta_gamma: Option<f64>,
    #[arg(long, global = true, env = "ISING_FACTOR_REPLICAS")]
    pub replicas: Option<usize>,
    #[arg(long, global = true, env = "ISING_FACTOR_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, env = "ISING_FACTOR_THREADS")]
    pub threads: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, global = true, env = "ISING_FACTOR_OUT")]
    pub out: Option<PathBuf>,
}

/// Fully resolved configuration, echoed into every manifest.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedConfig {
    pub experiment: Option<ExperimentKind>,
    pub params: ExperimentParams,
    pub threads: Option<usize>,
    pub out: PathBuf,
}

pub const DEFAULT_OUT: &str = "ising-factor-out";

/// Beta given in one layer; at most one of the two forms per layer.
fn layer_tanh(beta: Option<f64>, tanh_beta: Option<f64>) -> Result<Option<f64>, CliError> {
    match (beta, tanh_beta) {
        (Some(_), Some(_)) => Err(CliError::config("beta", "give exactly one of beta and tanh_beta")),
        (Some(b), None) => {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(CliError::config("beta", format!("must be finite and >= 0, got {b}")));
            }
            Ok(Some(b.tanh()))
        }
        (None, t) => Ok(t),
    }
}

pub fn read_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))
}

/// Merges defaults, file and overrides. `experiment` from the command line wins over the file.
pub fn resolve(cli_experiment: Option<&str>, overrides: &Overrides) -> Result<ResolvedConfig, CliError> {
    let file = match &overrides.config {
        Some(path) => read_file(path)?,
        None => FileConfig::default(),
    };
    let experiment = match cli_experiment.or(file.experiment.as_deref()) {
        Some(name) => Some(name.parse::<ExperimentKind>()?),
        None => None,
    };
    let mut p = ExperimentParams::defaults(experiment.unwrap_or(ExperimentKind::ReferenceMatch));
    macro_rules! layer {
        ($src:expr, $($field:ident),*) => {
            $(if let Some(v) = $src.$field { p.$field = v; })*
        };
    }
    layer!(file, d, depth, t, dt, replicas, seed, ks_inflation, ratio_point_max, m_max, min_trials);
    if let Some(v) = layer_tanh(file.beta, file.tanh_beta)? {
        p.tanh_beta = v;
    }
    if file.gamma.is_some() {
        p.gamma = file.gamma;
    }
    if file.delta_gamma.is_some() {
        p.delta_gamma = file.delta_gamma;
    }
    layer!(overrides, d, depth, t, dt, replicas, seed);
    if let Some(v) = layer_tanh(overrides.beta, overrides.tanh_beta)? {
        p.tanh_beta = v;
    }
    if overrides.gamma.is_some() {
        p.gamma = overrides.gamma;
    }
    if overrides.delta_gamma.is_some() {
        p.delta_gamma = overrides.delta_gamma;
    }
    p.validate()?;
    let threads = overrides.threads.or(file.threads);
    if threads == Some(0) {
        return Err(CliError::config("threads", "must be >= 1"));
    }
    let out = overrides.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok(ResolvedConfig { experiment, params: p, threads, out })
}
