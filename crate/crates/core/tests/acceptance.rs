//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rigidsched::gradcheck::check_gradients;
use rigidsched::irrigation::{build_network, level_index, pade_delay_realization, steady_state, NetworkSpec};
use rigidsched::lti::oracle::{simulate_ode_oracle, DelayedLoad};
use rigidsched::lti::{BasisResponses, PiecewiseSignal, StateSpaceModel};
use rigidsched::objectives::{ExpPenalty, GridEvaluator, LogBarrier, Objective};
use rigidsched::problem::{max_violation, state_at, DemandRequest, PenaltySpec, Schedule, ScheduleProblem};
use rigidsched::scenario::{Scenario, Smoothing};
use rigidsched::solver::{
    feasible_init, solve_round, BarrierContinuation, Initializer, Mode, PenaltyContinuation, SolveReport,
    SolverConfig, Strategy, Zeros,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn scenario_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/two_pool_paper.scenario")
}

/// Strictly stable `n x n` matrix: negative definite symmetric part plus a
/// random skew part.
fn random_stable(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let s = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let shift: f64 = rng.gen_range(0.05..0.5);
    -(m.transpose() * &m) * (0.5 / n as f64) - DMatrix::identity(n, n) * shift + (&s - s.transpose()) * 0.5
}

fn random_pulse(rng: &mut ChaCha8Rng, horizon: f64) -> PiecewiseSignal {
    let start = rng.gen_range(0.0..horizon * 0.5);
    let len = rng.gen_range(0.5..horizon * 0.3);
    PiecewiseSignal::pulse(start, start + len, rng.gen_range(-2.0..2.0)).unwrap()
}

fn superposition_vs_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (horizon, sampling, step) = (20.0, 2.0, 1e-3);
    let mut worst: f64 = 0.0;
    for sys in 0..20 {
        // Every other system gets an integrator driven by its first state.
        let stable = rng.gen_range(1..=5);
        let integrator = sys % 2 == 1;
        let n = stable + usize::from(integrator);
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (stable, stable)).copy_from(&random_stable(stable, &mut rng));
        if integrator {
            a[(stable, 0)] = rng.gen_range(0.2..1.0);
        }
        let inputs = rng.gen_range(1..=2);
        let b = DMatrix::from_fn(n, inputs, |_, _| rng.gen_range(-1.0..1.0));
        let e = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let u0 = DVector::from_fn(inputs, |_, _| rng.gen_range(-0.5..0.5));
        // One inactive row; constraints play no part here.
        let c = DMatrix::from_fn(1, n, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let model = StateSpaceModel::new(a, b, vec![e], c, dvector![1e6], x0, u0).unwrap();
        let demands: Vec<DemandRequest> = (0..rng.gen_range(1..=3))
            .map(|_| DemandRequest::new(random_pulse(&mut rng, horizon), 0, 0.0, 5.0, PenaltySpec::Linear).unwrap())
            .collect();
        let lo = DVector::from_element(inputs, -1.0);
        let hi = DVector::from_element(inputs, 1.0);
        let problem = ScheduleProblem::new(model.clone(), demands.clone(), horizon, sampling, lo, hi).unwrap();
        let mut s = Schedule::zeros(demands.len(), inputs, problem.slots());
        s.tau.iter_mut().for_each(|t| *t = rng.gen_range(0.0..5.0));
        s.alpha.iter_mut().for_each(|a| *a = rng.gen_range(-1.0..1.0));

        let basis = problem.basis().unwrap();
        let u = problem.control_signal(&s).unwrap();
        let loads: Vec<DelayedLoad<'_>> = demands
            .iter()
            .zip(s.tau.iter())
            .map(|(d, &tau)| DelayedLoad {
                channel: d.channel,
                signal: &d.profile,
                delay: tau,
            })
            .collect();
        let oracle = simulate_ode_oracle(&model, &u, &loads, horizon, step).unwrap();
        for q in 1..=200 {
            let t = q as f64 * horizon / 200.0;
            let x = state_at(&basis, &s, t).unwrap();
            worst = worst.max((x - oracle.at(t)).amax());
        }
    }
    ensure(worst <= 1e-5, || format!("max error {worst:e} > 1e-5"))?;
    within(t0.elapsed(), Duration::from_secs(30))?;
    Ok(format!("20 systems, 200 times each, max error {worst:.2e}"))
}

fn gradient_protocol(objectives: &[Box<dyn Objective>]) -> Outcome {
    let t0 = Instant::now();
    let base = Scenario::bundled_two_pool();
    let smooth = base.smoothed(Smoothing { ramp: 0.4, steps: 40 }).unwrap();
    let mut lines = Vec::new();
    for (label, scenario, tol) in [("rectangular", &base, 1e-2), ("smoothed", &smooth, 1e-4)] {
        let ev = scenario.evaluator(Some(0.1)).unwrap();
        for obj in objectives {
            let r = check_gradients(&ev, obj.as_ref(), 20, 0, true).map_err(|e| e.to_string())?;
            ensure(r.worst <= tol, || {
                format!("{label} {} {}: worst {:e} > {tol:e}", r.objective, r.parameter, r.worst)
            })?;
            lines.push(format!("{label} {} {} {:.1e}", r.objective, r.parameter, r.worst));
        }
    }
    within(t0.elapsed(), Duration::from_secs(120))?;
    Ok(lines.join(", "))
}

fn barrier_gradients() -> Outcome {
    gradient_protocol(&[Box::new(LogBarrier::new(0.1).unwrap())])
}

fn penalty_gradients() -> Outcome {
    gradient_protocol(&[Box::new(ExpPenalty::new(10.0).unwrap()), Box::new(ExpPenalty::new(100.0).unwrap())])
}

fn capacity_toy() -> GridEvaluator {
    let model = StateSpaceModel::new(
        dmatrix![-0.1],
        dmatrix![0.0],
        vec![dmatrix![1.0]],
        dmatrix![1.0],
        dvector![10.0],
        dvector![9.0],
        dvector![0.0],
    )
    .unwrap();
    let profile = PiecewiseSignal::pulse(1.0, 11.0, 1.5).unwrap().with_ramped_edges(1.0, 20).unwrap();
    let d = DemandRequest::new(profile, 0, 0.0, 40.0, PenaltySpec::Linear).unwrap();
    let p = ScheduleProblem::new(model, vec![d], 100.0, 100.0, dvector![0.0], dvector![0.0]).unwrap();
    GridEvaluator::new(p, 0.05).unwrap()
}

fn two_pulse_toy() -> GridEvaluator {
    let model = StateSpaceModel::new(
        dmatrix![-1.0],
        dmatrix![1.0],
        vec![dmatrix![1.0]],
        dmatrix![1.0],
        dvector![1.2],
        dvector![0.0],
        dvector![0.0],
    )
    .unwrap();
    let d = |start: f64| {
        let v = PiecewiseSignal::pulse(start, start + 5.0, 1.0).unwrap();
        DemandRequest::new(v, 0, 0.0, 30.0, PenaltySpec::Linear).unwrap()
    };
    let p = ScheduleProblem::new(model, vec![d(0.0), d(1.0)], 40.0, 10.0, dvector![-0.1], dvector![0.1]).unwrap();
    GridEvaluator::new(p, 0.05).unwrap()
}

/// Runs a strategy while asserting the descent invariants at every observed
/// iterate.
fn observed_run(
    name: &str,
    ev: &GridEvaluator,
    init: &Schedule,
    cfg: &SolverConfig,
) -> Result<(SolveReport, usize), String> {
    let strategy: Box<dyn Strategy> = match cfg.mode {
        Mode::Barrier => Box::new(BarrierContinuation),
        Mode::Penalty => Box::new(PenaltyContinuation),
    };
    let mut problems = Vec::new();
    let mut seen = 0;
    let mut last: Option<(usize, f64)> = None;
    let report = strategy
        .solve(ev, init, cfg, &mut |it| {
            seen += 1;
            if !ev.problem().in_boxes(it.schedule) {
                problems.push(format!("round {} iterate {} leaves the boxes", it.round, it.iteration));
            }
            if cfg.mode == Mode::Barrier && ev.residuals(it.schedule).unwrap().max() >= 0.0 {
                problems.push(format!("round {} iterate {} is infeasible", it.round, it.iteration));
            }
            if let Some((round, cost)) = last {
                if round == it.round && it.cost > cost {
                    problems.push(format!("round {} cost rose at iterate {}", it.round, it.iteration));
                }
            }
            last = Some((it.round, it.cost));
        })
        .map_err(|e| format!("{name}: {e}"))?;
    if let Some(p) = problems.first() {
        return Err(format!("{name}: {p}"));
    }
    for (r, round) in report.rounds.iter().enumerate() {
        ensure(round.cost_trace.windows(2).all(|w| w[1] <= w[0]), || {
            format!("{name}: cost trace of round {r} is not monotone")
        })?;
    }
    ensure(seen > 0, || format!("{name}: observer never called"))?;
    Ok((report, seen))
}

fn descent_invariants() -> Outcome {
    let barrier = SolverConfig::default();
    let penalty = SolverConfig {
        mode: Mode::Penalty,
        ..SolverConfig::default()
    };
    let bundled = Scenario::bundled_two_pool();
    let bundled_ev = bundled.evaluator(None).unwrap();
    let zeros = |ev: &GridEvaluator| Zeros.initial(ev).unwrap();
    let separated = |ev: &GridEvaluator| feasible_init(ev, None).unwrap();
    let toy = capacity_toy();
    let pulses = two_pulse_toy();
    let runs: Vec<(&str, &GridEvaluator, Schedule, SolverConfig)> = vec![
        ("capacity toy barrier", &toy, separated(&toy), barrier.clone()),
        ("capacity toy penalty", &toy, zeros(&toy), penalty.clone()),
        ("two-pulse toy barrier", &pulses, separated(&pulses), barrier.clone()),
        ("two-pulse toy penalty", &pulses, zeros(&pulses), penalty.clone()),
        ("two-pool barrier", &bundled_ev, separated(&bundled_ev), bundled.solver().clone()),
        (
            "two-pool penalty",
            &bundled_ev,
            zeros(&bundled_ev),
            SolverConfig {
                mode: Mode::Penalty,
                ..bundled.solver().clone()
            },
        ),
    ];
    let mut total = 0;
    for (name, ev, init, cfg) in &runs {
        total += observed_run(name, ev, init, cfg)?.1;
    }
    Ok(format!("{} runs, {total} observed iterates", runs.len()))
}

fn scalar_oracle() -> Outcome {
    let t0 = Instant::now();
    let ev = capacity_toy();
    let obj = LogBarrier::new(0.1).unwrap();
    let d = &ev.problem().demands()[0];
    let cost_at = |tau: f64| {
        let mut s = Schedule::zeros(1, 1, ev.problem().slots());
        s.tau[0] = tau;
        obj.cost(&ev, &s).unwrap().total
    };
    let n = ((d.tau_hi - d.tau_lo) / 1e-3).round() as usize;
    let (tau_star, _) = (0..=n)
        .map(|i| d.tau_lo + i as f64 * 1e-3)
        .map(|t| (t, cost_at(t)))
        .fold((f64::NAN, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
    let init = feasible_init(&ev, None).unwrap();
    let r = solve_round(&ev, &init, &obj, &SolverConfig::default(), &mut |_| {}, 0).map_err(|e| e.to_string())?;
    let tau = r.schedule.tau[0];
    ensure((tau - tau_star).abs() <= 1e-2, || format!("solver tau {tau} vs grid search {tau_star}"))?;
    within(t0.elapsed(), Duration::from_secs(10))?;
    Ok(format!("solver tau {tau:.4}, grid search {tau_star:.3}"))
}

fn two_pool_barrier() -> Outcome {
    let t0 = Instant::now();
    let scenario = Scenario::bundled_two_pool();
    let ev = scenario.evaluator(None).unwrap();
    let cfg = scenario.solver().clone();
    ensure(cfg.mode == Mode::Barrier && cfg.epsilon0 == 0.1, || "bundled solver is not barrier at 0.1".into())?;
    let init = feasible_init(&ev, None).unwrap();
    let report = BarrierContinuation.solve(&ev, &init, &cfg, &mut |_| {}).map_err(|e| e.to_string())?;
    let (before, after) = (init.tau.sum(), report.schedule.tau.sum());
    ensure(after < before, || format!("total delay {after} not below initial {before}"))?;
    let bands = [(9.4, 9.7), (9.5, 9.7)];
    let mut worst: f64 = f64::NEG_INFINITY;
    for x in ev.states(&report.schedule).unwrap() {
        for (pool, (lo, hi)) in bands.iter().enumerate() {
            let y = x[level_index(pool)];
            worst = worst.max(lo - y).max(y - hi);
        }
    }
    ensure(worst <= 1e-6, || format!("level band exceeded by {worst:e}"))?;
    let alpha = report.schedule.alpha.amax();
    ensure(alpha <= 0.05, || format!("|u - u0| reaches {alpha}"))?;
    within(t0.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "total delay {before} -> {after:.3}, worst band margin {worst:.2e}, max |u - u0| {alpha:.4}"
    ))
}

fn two_pool_penalty() -> Outcome {
    let t0 = Instant::now();
    let scenario = Scenario::bundled_two_pool();
    let ev = scenario.evaluator(None).unwrap();
    let zeros = Zeros.initial(&ev).unwrap();
    let start = max_violation(&ev, &zeros, 1e-3).unwrap();
    ensure(!start.feasible, || "zero initialization reported feasible".into())?;
    let cfg = |vartheta0: f64, rounds: usize| SolverConfig {
        mode: Mode::Penalty,
        vartheta0,
        continuation_rounds: rounds,
        ..scenario.solver().clone()
    };
    let high = PenaltyContinuation.solve(&ev, &zeros, &cfg(100.0, 1), &mut |_| {}).map_err(|e| e.to_string())?;
    let low = PenaltyContinuation.solve(&ev, &zeros, &cfg(10.0, 1), &mut |_| {}).map_err(|e| e.to_string())?;
    let (v100, v10) = (high.max_violation(), low.max_violation());
    ensure(v100 <= 1e-3, || format!("violation at 100 is {v100:e}"))?;
    ensure(v10 > 1e-3, || format!("violation at 10 is only {v10:e}"))?;
    ensure(v100 <= v10, || format!("violation at 100 ({v100:e}) exceeds violation at 10 ({v10:e})"))?;
    within(t0.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "zero init violation {:.3}, after vartheta 10: {v10:.3e}, after vartheta 100: {v100:.3e}",
        start.max_violation()
    ))
}

fn irrigation_sanity() -> Outcome {
    let spec = NetworkSpec::two_pool();
    let model = build_network(&spec).unwrap();
    let margin = model
        .a()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    ensure(margin < -1e-6, || format!("largest eigenvalue real part {margin:e}"))?;

    let x = steady_state(&spec).unwrap();
    let u0 = DVector::from_column_slice(&spec.u0);
    let residual = (model.a() * &x + model.b() * &u0).amax();
    ensure(residual <= 1e-10, || format!("steady-state residual {residual:e}"))?;

    let mut gain_err: f64 = 0.0;
    for pool in &spec.pools {
        let pade = pade_delay_realization(pool.t_d).unwrap();
        for omega in [0.01, 0.1, 1.0] {
            let (re, im) = pade.response(omega);
            gain_err = gain_err.max(((re * re + im * im).sqrt() - 1.0).abs());
        }
    }
    ensure(gain_err <= 1e-9, || format!("Padé gain off by {gain_err:e}"))?;

    let basis = BasisResponses::build(&model, &[], 500.0, 50.0).unwrap();
    let s = Schedule::zeros(0, 2, basis.slots());
    let mut drift: f64 = 0.0;
    for q in 0..=1000 {
        let x = state_at(&basis, &s, q as f64 * 0.5).unwrap();
        for (pool, &u) in spec.u0.iter().enumerate() {
            drift = drift.max((x[level_index(pool)] - u).abs());
        }
    }
    ensure(drift <= 1e-8, || format!("levels drift by {drift:e}"))?;
    Ok(format!(
        "spectral abscissa {margin:.3e}, steady residual {residual:.1e}, Padé gain error {gain_err:.1e}, drift {drift:.1e}"
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files = ["schedule.json", "trajectory.csv", "violations.json", "trace.csv"];
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_rigidsched"))
            .arg("solve")
            .arg(scenario_path())
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            format!("solve exited with {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr))
        })?;
        let bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect();
        outputs.push(bytes);
    }
    for (i, f) in files.iter().enumerate() {
        ensure(outputs[0][i] == outputs[1][i], || format!("{f} differs between runs"))?;
    }
    Ok(format!("{} files byte-identical", files.len()))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("superposition matches RK4 oracle", superposition_vs_oracle),
        ("barrier gradients match finite differences", barrier_gradients),
        ("penalty gradients match finite differences", penalty_gradients),
        ("descent invariants hold on every run", descent_invariants),
        ("scalar toy matches grid search", scalar_oracle),
        ("two-pool barrier run", two_pool_barrier),
        ("two-pool penalty runs", two_pool_penalty),
        ("irrigation model sanity", irrigation_sanity),
        ("solve is deterministic", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name} ({secs:.1} s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name} ({secs:.1} s): {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
