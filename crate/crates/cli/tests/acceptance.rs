//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs with `harness = false` so every line is printed regardless of outcome.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cogflow::experiments::{self, all_pass, DecisionBounds, DecisionConfig, RecoveryBounds, RecoveryConfig};
use cogflow::experiments::{ReductionBounds, ReductionConfig, ScalingBounds, ScalingConfig};
use cogflow::fastslow::{sample_critical_manifold, SolverOptions};
use cogflow::{integrate, integrate_reduced, monotonicity_report, CubicBenchmark, FlowSystem};
use cogflow::{IntegratorConfig, Metric, Partition, State};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn partition() -> Partition {
    Partition::new(1, 1).unwrap()
}

fn criterion_1() -> Outcome {
    let cfg = ScalingConfig::default();
    assert_eq!(cfg.epsilons, vec![0.4, 0.2, 0.1, 0.05]);
    assert_eq!((cfg.t_end, cfg.dt), (20.0, 0.01));
    let r = match experiments::run_timescale_scaling(&cfg, None) {
        Ok(r) => r,
        Err(e) => return check(false, format!("error: {e}")),
    };
    let v = r.verdicts(&ScalingBounds::default());
    check(
        all_pass(&v),
        format!(
            "slow slope {:.4} in [1.8, 2.2]: {}; r² {:.4} >= 0.99: {}; fast slope {:.4} in [-0.2, 0.2]: {}",
            r.slow_slope, v[0].pass, r.r_squared_slow, v[1].pass, r.fast_slope, v[2].pass
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let starts: Vec<[f64; 2]> = (0..50)
        .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
        .collect();
    let cfg = IntegratorConfig::new(0.01, 20.0);
    let mut worst = f64::NEG_INFINITY;
    let mut failures = 0;
    for eps in [0.4, 0.1] {
        let metric = Metric::block_anisotropic(eps, partition()).unwrap();
        let sys = FlowSystem::new(&CubicBenchmark, &metric).unwrap();
        for s in &starts {
            let traj = match integrate(&sys, &State::from_slice(s, 0.0).unwrap(), &cfg, None) {
                Ok(t) => t,
                Err(e) => return check(false, format!("run from {s:?} at eps {eps} failed: {e}")),
            };
            let rep = monotonicity_report(&traj).unwrap();
            worst = worst.max(rep.max_increase / rep.slack);
            if !rep.passes() {
                failures += 1;
            }
        }
    }
    check(
        failures == 0,
        format!("100 runs, {failures} with an increase above slack; worst increase/slack = {worst:.3e}"),
    )
}

fn criterion_3() -> Outcome {
    let r = match experiments::run_perturbation_recovery(&RecoveryConfig::default()) {
        Ok(r) => r,
        Err(e) => return check(false, format!("error: {e}")),
    };
    let v = r.verdicts(&RecoveryBounds::default());
    check(
        all_pass(&v) && (r.stability_margin - 1.0).abs() < 1e-9,
        format!(
            "post-kick rate {:?} vs margin {:.6} (±10%): {}; D(t_kick+5)/|delta| = {:.4e} <= 0.01: {}",
            r.post_kick_rate,
            r.stability_margin,
            v[0].pass,
            r.distance_after_window / r.delta_norm,
            v[1].pass
        ),
    )
}

fn criterion_4() -> Outcome {
    let cfg = ReductionConfig::default();
    assert_eq!(cfg.epsilons, vec![0.4, 0.3, 0.2, 0.15, 0.1]);
    let r = match experiments::run_reduction_validation(&cfg, None) {
        Ok(r) => r,
        Err(e) => return check(false, format!("error: {e}")),
    };
    let v = r.verdicts(&ReductionBounds::default());
    let errs: Vec<String> = r.reports.iter().map(|x| format!("{:.4e}", x.max_error)).collect();
    check(
        all_pass(&v),
        format!(
            "errors [{}] strictly decreasing: {}; slope {:?} in [1.7, 2.3]: {}",
            errs.join(", "),
            v[0].pass,
            r.fit.as_ref().map(|f| f.slope),
            v[1].pass
        ),
    )
}

fn criterion_5() -> Outcome {
    let grid: Vec<DVector<f64>> = (0..41)
        .map(|i| DVector::from_element(1, -2.0 + 0.1 * i as f64))
        .collect();
    let sample = match sample_critical_manifold(
        &CubicBenchmark,
        &grid,
        &DVector::zeros(1),
        0.0,
        &SolverOptions::default(),
    ) {
        Ok(s) => s,
        Err(e) => return check(false, format!("error: {e}")),
    };
    let (mut h_err, mut m_err) = (0.0_f64, 0.0_f64);
    for p in &sample.points {
        h_err = h_err.max((p.h_star[0] - p.c[0].powi(3)).abs());
        m_err = m_err.max((p.stability_margin - 1.0).abs());
    }
    check(
        sample.points.len() == 41 && h_err <= 1e-9 && m_err <= 1e-9,
        format!(
            "{} points; max |h* - c³| = {h_err:.3e}; max |margin - 1| = {m_err:.3e}",
            sample.points.len()
        ),
    )
}

fn criterion_6() -> Outcome {
    let eps = 0.2;
    let cfg = IntegratorConfig::new(0.01, 50.0);
    let traj = match integrate_reduced(&CubicBenchmark, eps, &DVector::from_element(1, 1.0), &cfg) {
        Ok(t) => t,
        Err(e) => return check(false, format!("error: {e}")),
    };
    let t = *traj.times.last().unwrap();
    let c = traj.last_state().unwrap()[0];
    let exact = (-eps * eps * t).exp();
    check(
        (t - 50.0).abs() < 1e-9 && (c - exact).abs() <= 1e-6,
        format!(
            "c(50) = {c:.12}, closed form {exact:.12}, |diff| = {:.3e}",
            (c - exact).abs()
        ),
    )
}

fn criterion_7() -> Outcome {
    let r = match experiments::run_decision_experiment(&DecisionConfig::default(), None) {
        Ok(r) => r,
        Err(e) => return check(false, format!("error: {e}")),
    };
    let bounds = DecisionBounds::default();
    assert!((bounds.min_bias_at_switch - 0.335).abs() < 1e-3);
    let v = r.verdicts(&bounds);
    check(
        all_pass(&v),
        format!(
            "switches {} (==1): {}; switch at t = {:?} with bias {:?} (>= {:.4}): {}; tracking {:.4} (<= 0.05): {}; capped-ramp switches {}: {}",
            r.main.sign_switches,
            v[0].pass,
            r.main.switch_time,
            r.main.bias_at_switch,
            bounds.min_bias_at_switch,
            v[1].pass,
            r.main.tracking_error_outside_switch(),
            v[2].pass,
            r.control.sign_switches,
            v[3].pass
        ),
    )
}

fn criterion_8() -> Outcome {
    let cfg = experiments::GradcheckConfig::default();
    assert_eq!(cfg.samples, 200);
    let rows = match experiments::run_gradcheck(&experiments::builtin_potentials(), &cfg) {
        Ok(r) => r,
        Err(e) => return check(false, format!("error: {e}")),
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for r in &rows {
        let h = r.max_hessian_error.unwrap_or(f64::NAN);
        pass &= r.max_gradient_error <= 1e-6 && h <= 1e-6;
        parts.push(format!(
            "{}: grad {:.2e}, hess {:.2e}",
            r.potential, r.max_gradient_error, h
        ));
    }
    check(pass && rows.len() == 3, parts.join("; "))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        out.insert(name, fs::read(&path).unwrap());
    }
    out
}

fn artifacts_only(snap: &BTreeMap<String, Vec<u8>>) -> BTreeMap<String, Vec<u8>> {
    snap.iter()
        .filter(|(k, _)| k.ends_with(".csv") || k.ends_with(".svg"))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

fn cogflow(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_cogflow"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("run cogflow")
        .status
        .code()
        .unwrap_or(-1)
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let (a_s, b_s) = (a.to_str().unwrap(), b.to_str().unwrap());
    let mut notes = Vec::new();
    let mut pass = true;

    let code_a = cogflow(&["decision", "--out", a_s]);
    let code_b = cogflow(&["decision", "--out", b_s]);
    let snap_a = snapshot(&a);
    let identical = artifacts_only(&snap_a) == artifacts_only(&snapshot(&b)) && artifacts_only(&snap_a).len() >= 4;
    pass &= code_a == 0 && code_b == 0 && identical && !a.join("FAILED").exists();
    notes.push(format!(
        "pass run exits {code_a}/{code_b}, artifacts byte-identical: {identical}"
    ));

    // Feeding the echoed configuration back reproduces every file, itself included.
    let echoed = a.join("effective_config");
    let code = cogflow(&["decision", "--config", echoed.to_str().unwrap()]);
    let round_trip = snapshot(&a) == snap_a;
    pass &= code == 0 && round_trip;
    notes.push(format!("effective_config replay exits {code}, identical: {round_trip}"));

    let f = tmp.path().join("f");
    let code = cogflow(&[
        "decision",
        "--out",
        f.to_str().unwrap(),
        "--set",
        "bounds.decision_max_tracking_error=1e-6",
    ]);
    let marker = f.join("FAILED").exists();
    pass &= code == 1 && marker;
    notes.push(format!("tightened bound exits {code} (FAILED marker: {marker})"));

    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "[integrator]\ndt = 0.01\ndt 0.02\n").unwrap();
    let code = cogflow(&[
        "decision",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        tmp.path().join("m").to_str().unwrap(),
    ]);
    pass &= code == 2;
    notes.push(format!("malformed config exits {code}"));

    let d = tmp.path().join("d");
    let code = cogflow(&["scaling", "--out", d.to_str().unwrap(), "--set", "integrator.dt=10"]);
    let marker = d.join("FAILED").exists();
    pass &= code == 3 && marker;
    notes.push(format!("dt = 10 exits {code} (FAILED marker: {marker})"));

    check(pass, notes.join("; "))
}

type Criterion = (u32, &'static str, fn() -> Outcome, Option<Duration>);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "timescale scaling", criterion_1, Some(Duration::from_secs(5))),
        (2, "monotonic descent", criterion_2, Some(Duration::from_secs(10))),
        (3, "exponential contraction", criterion_3, Some(Duration::from_secs(5))),
        (4, "reduction accuracy", criterion_4, Some(Duration::from_secs(30))),
        (5, "critical manifold", criterion_5, Some(Duration::from_secs(1))),
        (6, "reduced-flow oracle", criterion_6, Some(Duration::from_secs(1))),
        (7, "decision dynamics", criterion_7, Some(Duration::from_secs(5))),
        (8, "gradient/Hessian oracles", criterion_8, Some(Duration::from_secs(5))),
        (9, "determinism and interface contract", criterion_9, None),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    println!("\nrunning acceptance criteria");
    for (n, name, f, budget) in criteria {
        if !filter.is_empty() && !filter.iter().any(|s| name.contains(s.as_str()) || s == &n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let in_time = budget.is_none_or(|b| elapsed <= b);
        let pass = outcome.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget_note = match budget {
            Some(b) => format!("{:.2}s of {}s", elapsed.as_secs_f64(), b.as_secs()),
            None => format!("{:.2}s", elapsed.as_secs_f64()),
        };
        println!(
            "{} criterion {n} ({name}) [{budget_note}]: {}",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
    }
    println!("acceptance: {failed} criterion(s) failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
