//! Acceptance criteria at full size. Each test prints one `[PASS]` or `[FAIL]`
//! line for its criterion, followed by indented detail lines.
//! Run with `cargo test --test acceptance -- --nocapture` to see them.

use std::fmt::Display;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ising_factor::harness::{
    run_experiment, suite_identities, suite_inference_vs_oracle, Check, ExperimentKind, ExperimentParams,
    IdentityTrials, Report,
};
use ising_factor::inference::{compute_messages, covariance_matrix, drift_vector, pair_covariance, CouplingAssignment};
use ising_factor::rng::RngStream;
use ising_factor::topology::build_tree;

const SEED: u64 = 20_240_601;

fn verdict(criterion: u32, label: &str, passed: bool, detail: impl Display) -> bool {
    println!("[{}] criterion {criterion}: {label}: {detail}", if passed { "PASS" } else { "FAIL" });
    passed
}

fn show(check: &Check) {
    let f = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4e}"));
    println!(
        "    {:<4} {} value={} ref={} tol={} {}",
        if check.passed { "ok" } else { "FAIL" },
        check.name,
        f(check.value),
        f(check.reference),
        f(check.tolerance),
        check.note
    );
}

/// Named checks of `report` that must all exist and pass; printed as detail lines.
fn required(report: &Report, names: &[&str]) -> bool {
    let mut ok = true;
    for name in names {
        match report.checks().iter().find(|c| c.name == *name) {
            Some(c) => {
                show(c);
                ok &= c.passed;
            }
            None => {
                println!("    FAIL {name} missing from report");
                ok = false;
            }
        }
    }
    ok
}

fn experiment(kind: ExperimentKind, adjust: impl FnOnce(&mut ExperimentParams)) -> (Report, Duration) {
    let mut p = ExperimentParams::defaults(kind);
    p.seed = SEED;
    adjust(&mut p);
    let start = Instant::now();
    let report = run_experiment(kind, &p).expect("experiment runs");
    (report, start.elapsed())
}

#[test]
fn criterion_01_oracle_equivalence() {
    let start = Instant::now();
    let report = Report::Gof(suite_inference_vs_oracle(200, SEED).unwrap());
    let elapsed = start.elapsed();
    let checks = required(
        &report,
        &["marginals", "drift_vector", "pair_covariance", "triple_covariance_off_edge", "triple_covariance_at_edge"],
    );
    let tolerances = report
        .checks()
        .iter()
        .filter(|c| c.name.contains("covariance") || c.name == "marginals" || c.name == "drift_vector")
        .all(|c| c.tolerance.is_some_and(|t| t <= 1e-9));
    let fast = elapsed < Duration::from_secs(30);
    let passed = verdict(
        1,
        "oracle equivalence",
        checks && tolerances && fast && report.passed(),
        format!("200 instances within 1e-9 in {:.2}s (limit 30s)", elapsed.as_secs_f64()),
    );
    assert!(passed);
}

#[test]
fn criterion_02_zero_field_covariance() {
    let topo = build_tree(3, 2).unwrap();
    let mut worst = 0.0f64;
    for theta in [0.2f64, 0.5, 0.9] {
        let c = CouplingAssignment::uniform(&topo, theta.atanh()).unwrap();
        let msgs = compute_messages(&topo, &c, &vec![0.0; topo.len()]).unwrap();
        for u in 0..topo.len() {
            for v in 0..topo.len() {
                let expected = theta.powi(topo.distance_idx(u, v) as i32);
                worst = worst.max((pair_covariance(&topo, &c, &msgs, u, v) - expected).abs());
            }
        }
    }
    let passed = verdict(
        2,
        "zero-field covariance equals tanh(beta)^dist",
        worst <= 1e-12,
        format!("max deviation {worst:.3e} over all pairs on d=3, R=2 (limit 1e-12)"),
    );
    assert!(passed);
}

#[test]
fn criterion_03_identity_suite() {
    let report = Report::Gof(suite_identities(IdentityTrials { chains: 1000, edges: 10_000 }, SEED).unwrap());
    let ok = required(
        &report,
        &["one_step_expansion", "forward_expansion", "backward_expansion", "message_bound", "bp_contraction"],
    );
    let limits = [("one_step_expansion", 1e-10), ("forward_expansion", 1e-9), ("backward_expansion", 1e-9)]
        .iter()
        .all(|(n, lim)| report.checks().iter().any(|c| c.name == *n && c.tolerance.is_some_and(|t| t <= *lim)));
    let passed = verdict(
        3,
        "expansion identities and contraction",
        ok && limits,
        "10^3 chains, >= 10^4 directed-edge trials, zero inequality violations",
    );
    assert!(passed);
}

#[test]
fn criterion_04_jacobian() {
    let mut rng = RngStream::new(SEED).derive(4);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = 2 + (rng.next_u64() % 2) as usize;
        let depth = 1 + (rng.next_u64() % 3) as usize;
        let topo = build_tree(d, depth).unwrap();
        let betas: Vec<f64> = (0..topo.edge_count()).map(|_| rng.next_uniform()).collect();
        let c = CouplingAssignment::from_edges(&topo, &betas).unwrap();
        let x: Vec<f64> = (0..topo.len()).map(|_| 4.0 * rng.next_uniform() - 2.0).collect();
        let m = covariance_matrix(&topo, &c, &x).unwrap();
        for v in 0..topo.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[v] += h;
            xm[v] -= h;
            let fp = drift_vector(&topo, &c, &xp).unwrap();
            let fm = drift_vector(&topo, &c, &xm).unwrap();
            for u in 0..topo.len() {
                worst = worst.max(((fp[u] - fm[u]) / (2.0 * h) - m.get(u, v)).abs());
            }
        }
    }
    let passed = verdict(
        4,
        "covariance matrix equals drift Jacobian",
        worst <= 1e-6,
        format!("max |M - central difference| = {worst:.3e} on 50 instances (limit 1e-6)"),
    );
    assert!(passed);
}

#[test]
fn criterion_05_reference_match() {
    let (report, elapsed) = experiment(ExperimentKind::ReferenceMatch, |p| {
        assert_eq!((p.d, p.depth, p.tanh_beta, p.t, p.dt, p.replicas), (3, 2, 0.2, 1.0, 1e-3, 20_000));
    });
    let ok = required(
        &report,
        &[
            "ks_sde_root",
            "ks_reference_root",
            "second_moment_root",
            "pair_moment_dist_1",
            "pair_moment_dist_2",
            "pair_moment_dist_4",
            "conditional_mean",
        ],
    );
    let critical = 1.5 * 1.358 / (20_000f64).sqrt();
    let ks_limit = report
        .checks()
        .iter()
        .any(|c| c.name == "ks_sde_root" && c.tolerance.is_some_and(|t| (t - critical).abs() < 1e-15));
    let passed = verdict(
        5,
        "reference-process match",
        ok && ks_limit && report.passed(),
        format!("N=20000, KS critical {critical:.4e}, {:.1}s", elapsed.as_secs_f64()),
    );
    assert!(passed);
}

fn decay_line(report: &Report) -> String {
    match report {
        Report::Decay(d) => {
            let est: Vec<String> = d.estimates.iter().map(|e| format!("D({})={:.3e}", e.depth, e.mean)).collect();
            match &d.ratio {
                Some(r) => format!(
                    "{}; ratio {:.4} upper95 {}",
                    est.join(" "),
                    r.point,
                    r.upper_95.map_or("undefined".into(), |u| format!("{u:.4}"))
                ),
                None => est.join(" "),
            }
        }
        Report::Gof(_) => String::new(),
    }
}

#[test]
fn criterion_06_depth_decay() {
    let (report, elapsed) = experiment(ExperimentKind::DepthDecay, |p| {
        assert_eq!((p.d, p.depth, p.tanh_beta, p.t, p.replicas), (4, 4, 0.25, 1.0, 10_000));
    });
    let ok = required(&report, &["ratio_upper_below_one", "ratio_point"]);
    let point_limit = report.checks().iter().any(|c| c.name == "ratio_point" && c.tolerance == Some(0.9));
    let fast = elapsed < Duration::from_secs(15 * 60);
    let passed = verdict(
        6,
        "depth decay",
        ok && point_limit && fast,
        format!("{} in {:.1}s", decay_line(&report), elapsed.as_secs_f64()),
    );
    assert!(passed);
}

#[test]
fn criterion_07_root_decay() {
    let (report, elapsed) = experiment(ExperimentKind::RootDecay, |p| {
        assert_eq!((p.d, p.depth, p.tanh_beta, p.t, p.replicas), (4, 4, 0.25, 1.0, 10_000));
    });
    let ok = required(&report, &["ratio_upper_below_one"]);
    let Report::Decay(d) = &report else { panic!("root decay yields a decay report") };
    let decreasing = d.estimates.windows(2).all(|w| w[1].mean < w[0].mean);
    println!("    {:<4} estimates decrease in R", if decreasing { "ok" } else { "FAIL" });
    let passed =
        verdict(7, "root decay", ok && decreasing, format!("{} in {:.1}s", decay_line(&report), elapsed.as_secs_f64()));
    assert!(passed);
}

#[test]
fn criterion_08_h_machinery() {
    let (report, elapsed) = experiment(ExperimentKind::HConsistency, |_| {});
    let ok = required(&report, &["h_ode_halving_ratio", "integral_identity_refines"]);
    let band = report
        .checks()
        .iter()
        .find(|c| c.name == "h_ode_halving_ratio")
        .and_then(|c| c.value)
        .is_some_and(|r| (0.3..=0.7).contains(&r));
    let passed =
        verdict(8, "H-ODE residual and integral identity", ok && band, format!("{:.1}s", elapsed.as_secs_f64()));
    assert!(passed);
}

#[test]
fn criterion_09_factor_map() {
    let (report, elapsed) = experiment(ExperimentKind::FactorMap, |p| {
        assert_eq!((p.d, p.tanh_beta, p.replicas, p.m_max), (3, 0.2, 10_000, 4));
    });
    let names: Vec<String> = report
        .checks()
        .iter()
        .filter(|c| c.name.starts_with("two_point_dist_"))
        .map(|c| c.name.clone())
        .chain((0..4).map(|n| format!("sign_flip_{n}")))
        .collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let ok = required(&report, &refs) && names.len() > 4;
    let passed = verdict(
        9,
        "factor-map sign flips and two-point function",
        ok && report.passed(),
        format!("N=10000, {:.1}s", elapsed.as_secs_f64()),
    );
    assert!(passed);
}

#[test]
fn criterion_10_glauber() {
    let (report, elapsed) = experiment(ExperimentKind::Glauber, |p| assert!(p.min_trials >= 100_000));
    let ok = required(&report, &["transmission_frequency", "zero_coupling_dies"]);
    let trials = match &report {
        Report::Gof(g) => g.parameters.iter().find(|p| p.name == "trials").map_or(0.0, |p| p.value),
        Report::Decay(_) => 0.0,
    };
    let passed = verdict(
        10,
        "Glauber disagreement transmission",
        ok && trials >= 1e5,
        format!("{trials} trials, {:.1}s", elapsed.as_secs_f64()),
    );
    assert!(passed);
}

fn run_cli(out: &Path, threads: usize, args: &[&str]) -> Vec<u8> {
    let output = Command::new(env!("CARGO_BIN_EXE_ising-factor"))
        .args(["--out", out.to_str().unwrap(), "--threads", &threads.to_string(), "--seed", "7"])
        .args(args)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&output.stderr));
    output.stdout
}

/// Output files other than manifests, by name.
fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap()))
        .filter(|(n, _)| !n.ends_with(".manifest.json"))
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_11_determinism() {
    let runs: [&[&str]; 7] = [
        &["validate"],
        &["--replicas", "2000", "experiment", "reference-match"],
        &["--replicas", "200", "--depth", "3", "experiment", "depth-decay"],
        &["--replicas", "100", "--depth", "3", "experiment", "root-decay"],
        &["--replicas", "500", "experiment", "factor-map"],
        &["--depth", "3", "--tanh-beta", "0.5", "sample", "--kind", "conditional", "--field", "0.3"],
        &["--dt", "0.01", "trajectory", "--replica", "2"],
    ];
    let mut ok = true;
    for args in runs {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let stdout_a = run_cli(a.path(), 1, args);
        let stdout_b = run_cli(b.path(), 2, args);
        let (fa, fb) = (outputs(a.path()), outputs(b.path()));
        let same = stdout_a == stdout_b && fa == fb && !fa.is_empty();
        println!("    {:<4} {} ({} files)", if same { "ok" } else { "FAIL" }, args.join(" "), fa.len());
        ok &= same;
    }
    let passed = verdict(
        11,
        "determinism",
        ok,
        "identical config and seed give byte-identical JSON, CSV and stdout with 1 and 2 threads",
    );
    assert!(passed);
}
