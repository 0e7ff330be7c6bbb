use std::fmt::Write as _;
use std::time::SystemTime;

use ising_factor::harness::{
    run_experiment, suite_covariance_laws, suite_identities, suite_inference_vs_oracle, ExperimentKind,
    ExperimentParams, IdentityTrials, Report,
};
use ising_factor::inference::CouplingAssignment;
use ising_factor::rng::RngStream;
use ising_factor::samplers::{sample_broadcast, sample_conditional};
use ising_factor::sde::{integrate, NoiseSource};
use ising_factor::topology::build_tree;
use serde::Serialize;

use crate::config::ResolvedConfig;
use crate::error::CliError;
use crate::manifest::{prepare_dir, OutputSet};

/// Instances for the covariance-law suite run by `validate`.
pub const COVARIANCE_LAW_INSTANCES: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Broadcast,
    Conditional,
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

/// Everything in `validate.json`; independent of thread count and output path.
#[derive(Serialize)]
struct ValidateOutput<'a> {
    command: &'static str,
    seed: u64,
    trials: usize,
    passed: bool,
    reports: &'a [Report],
}

pub fn validate(cfg: &ResolvedConfig, trials: usize, started: SystemTime) -> Result<(), CliError> {
    if trials == 0 {
        return Err(CliError::config("trials", "must be >= 1"));
    }
    prepare_dir(&cfg.out)?;
    let seed = cfg.params.seed;
    let reports: Vec<Report> = pool(cfg.threads)?.install(|| -> Result<_, CliError> {
        Ok(vec![
            Report::Gof(suite_inference_vs_oracle(trials, seed)?),
            Report::Gof(suite_identities(IdentityTrials::default(), seed)?),
            Report::Gof(suite_covariance_laws(COVARIANCE_LAW_INSTANCES, seed)?),
        ])
    })?;
    let passed = reports.iter().all(Report::passed);
    let mut table = String::new();
    let mut csv = String::from("suite,check,value,reference,tolerance,passed\n");
    for r in &reports {
        table.push_str(&r.to_table());
        for line in r.to_csv().lines().skip(1) {
            let _ = writeln!(csv, "{},{line}", r.name());
        }
    }
    let checks: usize = reports.iter().map(|r| r.checks().len()).sum();
    let ok: usize = reports.iter().map(|r| r.checks().iter().filter(|c| c.passed).count()).sum();
    let _ = writeln!(table, "{ok}/{checks} checks passed");
    print!("{table}");

    let mut out = OutputSet::default();
    out.add(
        "validate.json",
        json_bytes(&ValidateOutput { command: "validate", seed, trials, passed, reports: &reports })?,
    );
    out.add("validate.csv", csv.into_bytes());
    out.commit(&cfg.out, "validate", "validate", cfg, started)?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{} of {checks} checks failed", checks - ok)))
    }
}

#[derive(Serialize)]
struct ExperimentOutput<'a> {
    experiment: ExperimentKind,
    params: &'a ExperimentParams,
    report: &'a Report,
}

fn decay_tables(report: &Report) -> Option<(String, String)> {
    let Report::Decay(d) = report else { return None };
    let mut depth = String::from("depth,mean,se\n");
    for e in &d.estimates {
        let _ = writeln!(depth, "{},{},{}", e.depth, e.mean, e.se);
    }
    let mut dist = String::from("distance,vertices,mean,se\n");
    for e in &d.by_distance {
        let _ = writeln!(dist, "{},{},{},{}", e.distance, e.vertices, e.mean, e.se);
    }
    Some((depth, dist))
}

pub fn experiment(cfg: &ResolvedConfig, started: SystemTime) -> Result<(), CliError> {
    let kind = cfg
        .experiment
        .ok_or_else(|| CliError::Usage("no experiment named on the command line or in the config file".into()))?;
    prepare_dir(&cfg.out)?;
    let report = pool(cfg.threads)?.install(|| run_experiment(kind, &cfg.params))?;
    print!("{}", report.to_table());

    let name = kind.name();
    let mut out = OutputSet::default();
    out.add(
        format!("{name}.json"),
        json_bytes(&ExperimentOutput { experiment: kind, params: &cfg.params, report: &report })?,
    );
    out.add(format!("{name}.csv"), report.to_csv().into_bytes());
    if let Some((depth, dist)) = decay_tables(&report) {
        out.add(format!("{name}.depth.csv"), depth.into_bytes());
        out.add(format!("{name}.distance.csv"), dist.into_bytes());
    }
    out.commit(&cfg.out, name, "experiment", cfg, started)?;
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks().iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::Validation(format!("{name}: {}", failed.join(", "))))
    }
}

/// Spin sample as `vertex_label,spin` rows. The conditional sampler uses a
/// uniform external field `field` on every vertex.
pub fn sample(
    cfg: &ResolvedConfig,
    kind: SampleKind,
    field: f64,
    replica: u64,
    started: SystemTime,
) -> Result<(), CliError> {
    if !field.is_finite() {
        return Err(CliError::config("field", format!("must be finite, got {field}")));
    }
    prepare_dir(&cfg.out)?;
    let p = &cfg.params;
    let topo = build_tree(p.d, p.depth)?;
    let rng = RngStream::new(p.seed).derive(replica);
    let spins = match kind {
        SampleKind::Broadcast => sample_broadcast(&topo, p.tanh_beta, &rng)?,
        SampleKind::Conditional => {
            let couplings = CouplingAssignment::uniform(&topo, p.beta()?)?;
            sample_conditional(&topo, &couplings, &vec![field; topo.len()], &rng)?
        }
    };
    let mut csv = String::from("vertex_label,spin\n");
    for (v, s) in spins.spins().iter().enumerate() {
        let _ = writeln!(csv, "{},{s}", topo.label(v));
    }
    print!("{csv}");
    let mut out = OutputSet::default();
    out.add("sample.csv", csv.into_bytes());
    out.commit(&cfg.out, "sample", "sample", &SampleEcho { config: cfg, kind, field, replica }, started)?;
    Ok(())
}

#[derive(Serialize)]
struct SampleEcho<'a> {
    config: &'a ResolvedConfig,
    kind: SampleKind,
    field: f64,
    replica: u64,
}

/// One Euler-Maruyama trajectory, with coupling `gamma` on edges to the outer sphere when given.
pub fn trajectory(cfg: &ResolvedConfig, replica: u64, started: SystemTime) -> Result<(), CliError> {
    prepare_dir(&cfg.out)?;
    let p = &cfg.params;
    let topo = build_tree(p.d, p.depth)?;
    let beta = p.beta()?;
    let couplings = CouplingAssignment::interpolated(&topo, beta, p.gamma.unwrap_or(beta))?;
    let noise = NoiseSource::new(p.seed, replica, p.dt)?;
    let traj = integrate(&topo, &couplings, &noise, p.t)?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    println!("trajectory: {} vertices, {} steps, X_t(center) = {}", traj.vertex_count(), traj.steps(), traj.last()[0]);
    let mut out = OutputSet::default();
    out.add("trajectory.csv", csv);
    out.add("trajectory.json", json_bytes(&traj.meta)?);
    out.commit(&cfg.out, "trajectory", "trajectory", &TrajectoryEcho { config: cfg, replica }, started)?;
    Ok(())
}

#[derive(Serialize)]
struct TrajectoryEcho<'a> {
    config: &'a ResolvedConfig,
    replica: u64,
}
