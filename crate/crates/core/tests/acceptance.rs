//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
//!
//! Runs with `cargo test -p pgt-core --test acceptance`.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pgt_core::config::{benchmark_desk, static_sanity};
use pgt_core::experiments::{audit_instance_config, rls_rate, AuditConfig, RlsRateConfig};
use pgt_core::graph::Topology;
use pgt_core::metrics::{plateau_detector, write_metrics_csv, MetricsRecord, PLATEAU_REL_SLOPE};
use pgt_core::quad::{pack_regressor, RegressorVector};
use pgt_core::rls::RlsState;
use pgt_core::scenario::EngineeringCost;
use pgt_core::sim::{run, Engine, RunOutput, SimConfig, Simulation};
use pgt_core::tracking::AgentState;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn mean(states: &[AgentState], f: impl Fn(&AgentState) -> &DVector<f64>) -> DVector<f64> {
    let mut acc = DVector::zeros(f(&states[0]).len());
    for s in states {
        acc += f(s);
    }
    acc / states.len() as f64
}

// ---------------------------------------------------------------------------
// 1. Recursive and batch least squares agree.

/// Ridge least squares by QR on the stacked system `[X; I/√η] ξ = [y; 0]`.
fn ridge_qr(samples: &[(RegressorVector, f64)], eta: f64) -> DVector<f64> {
    let m = samples[0].0.as_vector().len();
    let rows = samples.len() + m;
    let mut a = DMatrix::zeros(rows, m);
    let mut b = DVector::zeros(rows);
    for (k, (chi, y)) in samples.iter().enumerate() {
        a.row_mut(k).copy_from(&chi.as_vector().transpose());
        b[k] = *y;
    }
    let reg = 1.0 / eta.sqrt();
    for j in 0..m {
        a[(samples.len() + j, j)] = reg;
    }
    let qr = a.qr();
    let qtb = qr.q().transpose() * b;
    qr.r()
        .solve_upper_triangular(&qtb)
        .expect("ridge system has full column rank")
}

fn rls_matches_batch() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut worst: f64 = 0.0;
    let combos: Vec<(usize, usize, f64)> = [1usize, 2, 3]
        .into_iter()
        .flat_map(|dim| {
            [10usize, 100, 500]
                .into_iter()
                .flat_map(move |h| [1.0, 1e2, 1e4].map(|eta| (dim, h, eta)))
        })
        .collect();
    let mut count = 0;
    for k in 0..50 {
        let (dim, horizon, eta) = combos[k % combos.len()];
        count += 1;
        let mut rls = RlsState::new(dim, eta).unwrap();
        let coeffs: Vec<f64> = (0..1 + dim + dim * dim)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let mut samples = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let x = DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
            let chi = pack_regressor(&x);
            let clean: f64 = chi
                .as_vector()
                .iter()
                .zip(&coeffs)
                .map(|(c, w)| c * w)
                .sum();
            let y = clean + rng.random_range(-0.5..0.5);
            rls.update(&chi, y).unwrap();
            samples.push((chi, y));
        }
        let batch = ridge_qr(&samples, eta);
        let rel = (rls.xi_hat().as_vector() - &batch).norm() / batch.norm();
        worst = worst.max(rel);
    }
    let elapsed = started.elapsed();
    verdict(
        count == 50 && worst <= 1e-8 && elapsed < Duration::from_secs(10),
        format!(
            "{count} sequences, worst relative gap {worst:.2e} (limit 1e-8), {:.2}s (limit 10s)",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2 and 3. Conservation and mean dynamics on random networks.

struct AuditResult {
    conservation: f64,
    mean_dynamics: f64,
    topologies: [usize; 3],
    elapsed: Duration,
}

fn audit() -> &'static AuditResult {
    static CELL: OnceLock<AuditResult> = OnceLock::new();
    CELL.get_or_init(|| {
        let started = Instant::now();
        let cfg = AuditConfig::default();
        let (mut conservation, mut mean_dynamics): (f64, f64) = (0.0, 0.0);
        let mut topologies = [0; 3];
        for k in 0..20 {
            let sim_cfg = audit_instance_config(&cfg, k);
            assert!(sim_cfg.agents <= 10 && sim_cfg.dim <= 3 && sim_cfg.iterations == 200);
            topologies[match sim_cfg.topology {
                Topology::Complete => 0,
                Topology::Ring => 1,
                _ => 2,
            }] += 1;
            let alpha = sim_cfg.alpha;
            let mut sim = Simulation::new(sim_cfg).unwrap();
            while !sim.is_done() {
                let prev = sim.state().agents.clone();
                let predicted = mean(&prev, |a| &a.x) - mean(&prev, |a| &a.d) * alpha;
                sim.step().unwrap();
                let now = &sim.state().agents;
                mean_dynamics = mean_dynamics.max((mean(now, |a| &a.x) - predicted).norm());
                conservation = conservation.max((mean(now, |a| &a.d) - mean(now, |a| &a.g)).norm());
            }
        }
        AuditResult {
            conservation,
            mean_dynamics,
            topologies,
            elapsed: started.elapsed(),
        }
    })
}

fn conservation_identity() -> Verdict {
    let a = audit();
    verdict(
        a.conservation <= 1e-10 && a.topologies.iter().all(|&c| c > 0) && a.elapsed < Duration::from_secs(10),
        format!(
            "20 instances (complete/ring/ER = {:?}), max |mean(d) - mean(g)| = {:.2e} (limit 1e-10), {:.2}s (limit 10s)",
            a.topologies,
            a.conservation,
            a.elapsed.as_secs_f64()
        ),
    )
}

fn mean_dynamics_identity() -> Verdict {
    let a = audit();
    verdict(
        a.mean_dynamics <= 1e-12,
        format!(
            "max |x̄_t - (x̄_(t-1) - α d̄_(t-1))| = {:.2e} (limit 1e-12)",
            a.mean_dynamics
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Linear convergence on static known costs.

/// Static benchmark cost `Σ ‖x − z_i‖² + ‖x − v_i‖²` minimized by plain
/// gradient descent, independent of the closed form used by the metrics.
fn static_optimum_by_descent(sim: &Simulation) -> DVector<f64> {
    let s = sim.scenario();
    let centers: Vec<DVector<f64>> = s
        .agents()
        .iter()
        .flat_map(|a| {
            let z = match &a.engineering {
                EngineeringCost::TrackingQuadratic { z, .. } => z.clone(),
                _ => unreachable!("benchmark costs"),
            };
            let v = -a.user.truth().q() / 2.0;
            [z, v]
        })
        .collect();
    let step = 1.0 / (2.0 * centers.len() as f64);
    let mut x = DVector::zeros(s.dim());
    for _ in 0..10_000 {
        let grad = centers
            .iter()
            .fold(DVector::zeros(s.dim()), |g, c| g + (&x - c) * 2.0);
        if grad.norm() < 1e-14 {
            break;
        }
        x -= grad * step;
    }
    x
}

fn r_squared_loglinear(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), (t, e)| (a + t / n, b + e.log10() / n));
    let sxy: f64 = points
        .iter()
        .map(|(t, e)| (t - mx) * (e.log10() - my))
        .sum();
    let sxx: f64 = points.iter().map(|(t, _)| (t - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|(_, e)| (e.log10() - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

/// Rows in the decade above `tol` before the series first drops below it.
fn decade_before(
    rows: &[MetricsRecord],
    field: fn(&MetricsRecord) -> f64,
    tol: f64,
) -> Option<(u64, Vec<(f64, f64)>)> {
    let hit = rows.iter().position(|r| field(r) < tol)?;
    let pts = rows[..hit]
        .iter()
        .filter(|r| field(r) <= 10.0 * tol)
        .map(|r| (r.t as f64, field(r)))
        .collect();
    Some((rows[hit].t, pts))
}

fn static_linear_convergence() -> Verdict {
    let started = Instant::now();
    let mut cfg = static_sanity();
    let probe = Simulation::new(cfg.clone()).unwrap();
    cfg.alpha = probe.advice().alpha_max / 4.0;
    let mut sim = Simulation::new(cfg).unwrap();
    let x_star = static_optimum_by_descent(&sim);
    sim.run_to_end(None).unwrap();
    let (rows, _) = sim.rows();
    let elapsed = started.elapsed();

    let oracle_gap = (mean(&sim.state().agents, |a| &a.x) - &x_star).norm();
    let tol = 1e-8;
    let mut ok = oracle_gap < tol && elapsed < Duration::from_secs(5);
    let mut parts = vec![format!("alpha = {:.4}", sim.config().alpha)];
    for (name, field) in [
        (
            "consensus norm",
            (|r: &MetricsRecord| r.consensus.sqrt()) as fn(&MetricsRecord) -> f64,
        ),
        ("tracking", |r: &MetricsRecord| r.tracking_error),
    ] {
        let last = field(rows.last().unwrap());
        if last >= tol {
            ok = false;
            parts.push(format!("{name} = {last:.2e} at t=5000"));
        }
        match decade_before(&rows, field, tol) {
            Some((t_hit, pts)) if pts.len() >= 3 => {
                let r2 = r_squared_loglinear(&pts);
                ok &= t_hit <= 5000 && r2 >= 0.99;
                parts.push(format!(
                    "{name} < 1e-8 at t={t_hit} (limit 5000), R² = {r2:.4} over {} rows",
                    pts.len()
                ));
            }
            Some((t_hit, pts)) => {
                ok = false;
                parts.push(format!(
                    "{name} < 1e-8 at t={t_hit} but only {} rows in the final decade",
                    pts.len()
                ));
            }
            None => {
                ok = false;
                parts.push(format!("{name} never below 1e-8"));
            }
        }
    }
    parts.push(format!(
        "|x̄ - x⋆(descent)| = {oracle_gap:.2e}, {:.2}s (limit 5s)",
        elapsed.as_secs_f64()
    ));
    verdict(ok, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 5. A single agent is centralized gradient descent.

fn single_agent_is_gradient_descent() -> Verdict {
    let cfg = SimConfig {
        agents: 1,
        iterations: 1000,
        learning: false,
        oracle_estimates: true,
        static_time: false,
        log_interval: Some(1000),
        topology: Topology::Complete,
        ..static_sanity()
    };
    let alpha = cfg.alpha;
    let mut sim = Simulation::new(cfg).unwrap();
    let agent = sim.scenario().agent(0);
    let (z, psi, m) = match &agent.engineering {
        EngineeringCost::TrackingQuadratic { z, psi, m } => (z.clone(), psi.clone(), *m as f64),
        _ => unreachable!("benchmark costs"),
    };
    let v = -agent.user.truth().q() / 2.0;
    let grad = |x: &DVector<f64>, t: f64| {
        let target = &z + &psi * (t / m).sin();
        (x - target) * 2.0 + (x - &v) * 2.0
    };
    let mut x = agent.x0.clone();
    let mut worst: f64 = 0.0;
    for t in 1..=1000u64 {
        x = &x - grad(&x, (t - 1) as f64) * alpha;
        sim.step().unwrap();
        worst = worst.max((&sim.state().agents[0].x - &x).amax());
    }
    verdict(
        worst <= 1e-12,
        format!("max |x_t - x_t(gradient descent)| over 1000 rounds = {worst:.2e} (limit 1e-12)"),
    )
}

// ---------------------------------------------------------------------------
// 6. Estimator error decays like 1/√t.

fn rls_rate_matches_inverse_sqrt() -> Verdict {
    let started = Instant::now();
    let cfg = RlsRateConfig::default();
    let report = rls_rate(&cfg).unwrap();
    let elapsed = started.elapsed();
    let m = report.median_ratio;
    verdict(
        (1.2..=3.2).contains(&m) && elapsed < Duration::from_secs(60) && report.runs.len() == 20,
        format!(
            "median error ratio over {} seeds = {m:.3} (accept [1.2, 3.2]), noise std {:.3}, {:.2}s (limit 60s)",
            report.runs.len(),
            cfg.noise_std,
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 7–9, 11. Desk-scale benchmark.

struct Desk {
    output: RunOutput,
    csv: Vec<u8>,
    elapsed: Duration,
}

fn desk_run() -> Desk {
    let started = Instant::now();
    let output = run(benchmark_desk()).unwrap();
    let elapsed = started.elapsed();
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &output.rows).unwrap();
    Desk {
        output,
        csv,
        elapsed,
    }
}

fn desk() -> &'static Desk {
    static CELL: OnceLock<Desk> = OnceLock::new();
    CELL.get_or_init(desk_run)
}

fn window_mean(rows: &[MetricsRecord], lo: f64, hi: f64, field: fn(&MetricsRecord) -> f64) -> f64 {
    let t_max = rows.last().unwrap().t as f64;
    let sel: Vec<f64> = rows
        .iter()
        .filter(|r| (r.t as f64) >= lo * t_max && (r.t as f64) <= hi * t_max)
        .map(field)
        .collect();
    sel.iter().sum::<f64>() / sel.len() as f64
}

fn regret_plateau() -> Verdict {
    let d = desk();
    let rows = &d.output.rows;
    let ts: Vec<f64> = rows.iter().map(|r| r.t as f64).collect();
    let vs: Vec<f64> = rows.iter().map(|r| r.avg_regret).collect();
    let rep = plateau_detector(&ts, &vs, PLATEAU_REL_SLOPE).unwrap();
    verdict(
        rep.certified && d.output.abort.is_none() && d.elapsed < Duration::from_secs(300),
        format!(
            "plateau {:.4e}, final-window slope {:.3e} per 1e4 rounds (limit {:.3e}), run {:.1}s (limit 300s)",
            rep.plateau,
            rep.slope_per_10k(),
            PLATEAU_REL_SLOPE * rep.plateau,
            d.elapsed.as_secs_f64()
        ),
    )
}

fn errors_stationary() -> Verdict {
    let rows = &desk().output.rows;
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, field) in [
        (
            "consensus norm",
            (|r: &MetricsRecord| r.consensus.sqrt()) as fn(&MetricsRecord) -> f64,
        ),
        ("tracking", |r: &MetricsRecord| r.tracking_error),
    ] {
        let fin = window_mean(rows, 0.8, 1.0, field);
        let mid = window_mean(rows, 0.4, 0.6, field);
        let ratio = fin / mid;
        ok &= fin > 0.0 && mid > 0.0 && (0.5..=1.5).contains(&ratio);
        parts.push(format!(
            "{name} final/mid = {fin:.3e}/{mid:.3e} = {ratio:.3} (accept [0.5, 1.5])"
        ));
    }
    let squared =
        window_mean(rows, 0.8, 1.0, |r| r.consensus) / window_mean(rows, 0.4, 0.6, |r| r.consensus);
    parts.push(format!(
        "squared consensus ratio {squared:.3} (informational)"
    ));
    verdict(ok, parts.join("; "))
}

fn estimation_error_sublinear() -> Verdict {
    let rows = &desk().output.rows;
    let at = |t: u64| {
        rows.iter()
            .find(|r| r.t == t)
            .map(|r| r.est_error_sum)
            .unwrap()
    };
    let (a, b) = (at(20_000), at(80_000));
    verdict(
        b / a < 4.0,
        format!(
            "c_U(80000)/c_U(20000) = {b:.2}/{a:.2} = {:.3} (limit < 4)",
            b / a
        ),
    )
}

fn eigenvalues_stabilize() -> Verdict {
    let rows = &desk().output.rows;
    let upper = 1.5 * 2.0;
    let after: Vec<&MetricsRecord> = rows.iter().filter(|r| r.t > 1000).collect();
    let bad = after
        .iter()
        .filter(|r| r.eig_min < -0.05 || r.eig_max > upper)
        .count();
    let frac = bad as f64 / after.len() as f64;
    let median_min = {
        let mut v: Vec<f64> = after.iter().map(|r| r.eig_min).collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    verdict(
        frac < 0.01,
        format!(
            "{bad}/{} logged rows after t=1000 outside [-0.05, {upper}] ({:.2}%, limit < 1%); median eig_min {median_min:.3}",
            after.len(),
            100.0 * frac
        ),
    )
}

// ---------------------------------------------------------------------------
// 10. Message passing and the dense fast path agree.

fn engines_agree() -> Verdict {
    let base = SimConfig {
        iterations: 1000,
        ..benchmark_desk()
    };
    let mut a = Simulation::new(SimConfig {
        engine: Engine::MessagePassing,
        ..base.clone()
    })
    .unwrap();
    let mut b = Simulation::new(SimConfig {
        engine: Engine::Matrix,
        ..base
    })
    .unwrap();
    let every = a.config().resolved_log_interval();
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    while !a.is_done() {
        a.step().unwrap();
        b.step().unwrap();
        if a.round().is_multiple_of(every) {
            compared += 1;
            for (sa, sb) in a.state().agents.iter().zip(&b.state().agents) {
                for (u, v) in [(&sa.x, &sb.x), (&sa.g, &sb.g), (&sa.d, &sb.d)] {
                    worst = worst.max((u - v).amax());
                }
                worst =
                    worst.max((sa.rls.xi_hat().as_vector() - sb.rls.xi_hat().as_vector()).amax());
            }
        }
    }
    verdict(
        worst <= 1e-12 && compared > 0,
        format!("{compared} logged steps, max state difference {worst:.2e} (limit 1e-12)"),
    )
}

// ---------------------------------------------------------------------------
// 11. Equal seeds give identical bytes.

fn deterministic_metrics() -> Verdict {
    let first = &desk().csv;
    let second = desk_run().csv;
    verdict(
        *first == second && !first.is_empty(),
        format!(
            "two desk runs: metrics.csv {} bytes each, identical = {}",
            first.len(),
            *first == second
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("1  rls equals batch least squares", rls_matches_batch),
        ("2  gradient-tracking conservation", conservation_identity),
        ("3  mean dynamics", mean_dynamics_identity),
        ("4  static linear convergence", static_linear_convergence),
        (
            "5  single agent is gradient descent",
            single_agent_is_gradient_descent,
        ),
        ("6  estimator 1/sqrt(t) rate", rls_rate_matches_inverse_sqrt),
        ("7a average regret plateau", regret_plateau),
        ("7b consensus/tracking stationary", errors_stationary),
        ("8  estimation error sublinear", estimation_error_sublinear),
        ("9  estimated curvature in range", eigenvalues_stabilize),
        ("10 engines agree", engines_agree),
    ];
    let mut failed = 0;
    let mut report = |name: &str, v: Verdict| {
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    };
    for (name, check) in criteria {
        report(name, check());
    }
    report("11 deterministic output", deterministic_metrics());
    println!("acceptance: {failed} failing");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
