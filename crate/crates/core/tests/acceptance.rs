//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p gscale-core --test acceptance`. Set
//! `ACCEPTANCE_ONLY=1,4,7` to run a subset. Exits non-zero if any selected
//! criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use gscale_core::experiment::{run_experiment, EstimatorSpec, ExperimentConfig, ExperimentReport};
use gscale_core::gscalei::GscaleConfig;

use common::{
    coupling_feasibility, dt_density, gradient_audit, instance, latent_support_patterns, random_scm, score_fd_error,
    telescoping_error, transport_duality_error, transport_round_trip_errors, transported_support_patterns,
};

const MASTER_SEED: u64 = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn experiment(n: usize, d: usize, n_graphs: usize, estimator: EstimatorSpec) -> ExperimentReport {
    let mut cfg = ExperimentConfig::new(n, d);
    cfg.n_graphs = n_graphs;
    cfg.estimator = estimator;
    cfg.master_seed = MASTER_SEED;
    run_experiment(&cfg).expect("valid config")
}

/// (mean l2, mean shd, failed graphs, worst l2).
fn means(rep: &ExperimentReport) -> (f64, f64, usize, f64) {
    let agg = &rep.aggregate;
    let l2 = agg.l2_loss.as_ref().map_or(f64::NAN, |s| s.mean);
    let shd = agg.shd.as_ref().map_or(f64::NAN, |s| s.mean);
    let worst = rep.records.iter().filter_map(|r| r.l2_loss).fold(0.0, f64::max);
    (l2, shd, agg.n_failed, worst)
}

fn describe(rep: &ExperimentReport) -> String {
    let (l2, shd, failed, worst) = means(rep);
    let mut s = format!("mean l2 {l2:.4} (max {worst:.4}), mean shd {shd:.2}");
    if failed > 0 {
        let codes: Vec<String> = rep
            .records
            .iter()
            .filter(|r| r.status != "ok")
            .map(|r| format!("graph {}: {}", r.graph, r.status))
            .collect();
        s += &format!(", {failed} failed [{}]", codes.join(", "));
    }
    s
}

fn recovery(n: usize, d: usize, n_graphs: usize, max_l2: f64, max_shd: f64) -> Outcome {
    let rep = experiment(n, d, n_graphs, EstimatorSpec::Oracle);
    let (l2, shd, failed, _) = means(&rep);
    outcome(failed == 0 && l2 <= max_l2 && shd <= max_shd, format!("n={n} d={d}: {}", describe(&rep)))
}

fn c1() -> Outcome {
    let parts: Vec<Outcome> = [5, 25, 100].into_iter().map(|d| recovery(5, d, 10, 0.1, 1.0)).collect();
    outcome(
        parts.iter().all(|o| o.pass),
        parts.iter().map(|o| o.detail.as_str()).collect::<Vec<_>>().join("; ") + " (bounds l2 <= 0.1, shd <= 1.0)",
    )
}

fn c2() -> Outcome {
    let o = recovery(8, 25, 5, 0.35, 3.0);
    outcome(o.pass, o.detail + " (bounds l2 <= 0.35, shd <= 3.0)")
}

fn c3() -> Outcome {
    let low = experiment(5, 25, 10, EstimatorSpec::Noised { tau: 0.1 });
    let high = experiment(5, 25, 10, EstimatorSpec::Noised { tau: 1.0 });
    let (l_low, s_low, f_low, _) = means(&low);
    let (l_high, s_high, f_high, _) = means(&high);
    outcome(
        f_low == 0 && f_high == 0 && l_high >= l_low && s_high >= s_low,
        format!("tau=0.1: {}; tau=1.0: {}", describe(&low), describe(&high)),
    )
}

fn c4() -> Outcome {
    let fd = score_fd_error(100, MASTER_SEED);
    let mut failures = Vec::new();
    let mut saturated = Vec::new();
    for k in 0..20u64 {
        let n = 2 + (k as usize % 5);
        let seed = 1000 + k;
        if let Err(e) = latent_support_patterns(n, 10_000, seed, 1e-3) {
            failures.push(format!("scm {k} (n={n}) latent: {e}"));
        }
        match transported_support_patterns(n, n + 3, 10_000, seed, 1e-3) {
            Ok(true) => {}
            Ok(false) => saturated.push(k.to_string()),
            Err(e) => failures.push(format!("scm {k} (n={n}) observed: {e}")),
        }
    }
    let observed = if saturated.is_empty() {
        "observed-space supports exact on all 20".to_string()
    } else {
        format!(
            "observed-space supports exact on {} (scm {} not encodable: tanh rounds to +-1)",
            20 - saturated.len(),
            saturated.join(", ")
        )
    };
    outcome(
        fd < 1e-6 && failures.is_empty(),
        format!(
            "score fd max error {fd:.2e} over 100 probes (< 1e-6); latent support patterns on 20 SCMs, n_s=1e4: {}; {observed}",
            if failures.is_empty() { "all exact".to_string() } else { failures.join("; ") }
        ),
    )
}

fn c5() -> Outcome {
    let (encode, transport) = transport_round_trip_errors(100, MASTER_SEED);
    let duality = (0..10u64)
        .map(|k| transport_duality_error(2 + k as usize % 5, 4 + 2 * k as usize, 100, 2000 + k))
        .fold(0.0, f64::max);
    let telescoping = (0..20u64)
        .map(|k| telescoping_error(&instance(random_scm(2 + k as usize % 5, 3000 + k), 10, 100, 3000 + k).batch))
        .fold(0.0, f64::max);
    outcome(
        encode < 1e-8 && transport < 1e-8 && duality < 1e-8 && telescoping < 1e-10,
        format!(
            "encode/decode {encode:.2e}, observed/latent transport {transport:.2e}, batch duality {duality:.2e} (< 1e-8); telescoping {telescoping:.2e} (< 1e-10)"
        ),
    )
}

fn c6() -> Outcome {
    let errs: Vec<f64> = (0..20u64).map(|k| gradient_audit(3, 5, 20, 4000 + k)).collect();
    let worst = errs.iter().copied().fold(0.0, f64::max);
    outcome(worst < 1e-4, format!("max relative error {worst:.2e} over 20 instances (< 1e-4)"))
}

fn c7() -> Outcome {
    let mut min_random = usize::MAX;
    let mut bad = Vec::new();
    for k in 0..10u64 {
        let n = 3 + k as usize % 3;
        let (aligned, random) = dt_density(n, 2 * n + 1, 200, 5000 + k, 5, 1e-3);
        if aligned != n {
            bad.push(format!("scm {k}: aligned true encoder has {aligned} != {n}"));
        }
        for r in random {
            min_random = min_random.min(r);
            if r < n {
                bad.push(format!("scm {k}: random encoder has {r} < {n}"));
            }
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("50 random encoders all have ||D_t||_0 >= n (smallest {min_random}); aligned true encoder attains n on all 10 SCMs")
        } else {
            bad.join("; ")
        },
    )
}

fn c8() -> Outcome {
    let mut bad = Vec::new();
    let mut checked = 0;
    for n in 2..=4 {
        for k in 0..10u64 {
            checked += 1;
            if let Err(e) = coupling_feasibility(n, n + 3, 100, 6000 + 10 * n as u64 + k, 5) {
                bad.push(format!("n={n} scm {k}: {e}"));
            }
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{checked} SCMs (10 each for n=2,3,4): correct coupling feasible, every wrong relabelling infeasible")
        } else {
            bad.join("; ")
        },
    )
}

fn c9() -> Outcome {
    let mut cfg = ExperimentConfig::new(3, 5);
    cfg.coupled = false;
    cfg.master_seed = MASTER_SEED;
    let rep = run_experiment(&cfg).expect("valid config");
    let (l2, shd, failed, _) = means(&rep);
    let recovered = rep.aggregate.coupling_recovered.unwrap_or(0);
    outcome(
        failed == 0 && recovered == 10 && l2 <= 0.1 && shd <= 1.0,
        format!("coupling recovered {recovered}/10; {} (bounds l2 <= 0.1, shd <= 1.0)", describe(&rep)),
    )
}

fn c10() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut coupled = ExperimentConfig::new(4, 8);
    coupled.n_graphs = 3;
    coupled.estimator = EstimatorSpec::Noised { tau: 0.1 };
    coupled.gscale = Some(GscaleConfig {
        steps: 5000,
        ..GscaleConfig::for_nodes(4)
    });
    let mut uncoupled = ExperimentConfig::new(3, 4);
    uncoupled.n_graphs = 2;
    uncoupled.coupled = false;
    uncoupled.gscale = Some(GscaleConfig {
        steps: 2000,
        ..GscaleConfig::for_nodes(3)
    });
    let mut details = Vec::new();
    let mut pass = true;
    for (name, cfg) in [("coupled", coupled), ("uncoupled", uncoupled)] {
        let mut files = Vec::new();
        for run in 0..2 {
            let mut cfg = cfg.clone();
            cfg.master_seed = MASTER_SEED;
            cfg.output_dir = Some(dir.path().join(format!("{name}_{run}")));
            run_experiment(&cfg).expect("valid config");
            files.push(std::fs::read(dir.path().join(format!("{name}_{run}/results.csv"))).expect("results.csv"));
        }
        let same = files[0] == files[1];
        pass &= same;
        details.push(format!("{name}: {} bytes, {}", files[0].len(), if same { "identical" } else { "DIFFERENT" }));
    }
    outcome(pass, details.join("; "))
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "recovery n=5, d in {5,25,100}", c1),
        (2, "recovery n=8, d=25", c2),
        (3, "noisy-score degradation", c3),
        (4, "score oracle and support patterns", c4),
        (5, "transport identities", c5),
        (6, "gradient audit", c6),
        (7, "score-change density bound", c7),
        (8, "coupling feasibility", c8),
        (9, "uncoupled end-to-end", c9),
        (10, "experiment determinism", c10),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        println!("{} [{id}] {name}: {} ({secs:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
