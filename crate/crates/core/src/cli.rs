//! Batch front end: `solve`, `simulate`, `check-gradients` and `init`.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 infeasible start,
//! 3 constraint violations above tolerance, 4 numeric failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gradcheck::check_gradients;
use crate::objectives::{GridEvaluator, ObjectiveRegistry};
use crate::problem::{total_delay_cost, Schedule, ViolationReport};
use crate::scenario::{OutputMap, Scenario, Smoothing};
use crate::solver::{
    Explicit, Initializer, InitializerRegistry, Mode, SolveReport, SolverConfig, StrategyRegistry, Termination,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE_START: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Staircase levels per ramp for `--smooth`.
pub const SMOOTHING_STEPS: usize = 40;

#[derive(Debug, Parser)]
#[command(name = "rigidsched", version, about = "Schedule rigid, delay-only load requests on a constrained LTI system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize delays and control deviations.
    Solve(SolveArgs),
    /// Re-simulate a fixed schedule.
    Simulate(SimulateArgs),
    /// Compare analytic gradients with central finite differences.
    CheckGradients(CheckArgs),
    /// Write the initial schedule and its trajectory without optimizing.
    Init(InitArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Barrier,
    Penalty,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Barrier => Mode::Barrier,
            ModeArg::Penalty => Mode::Penalty,
        }
    }
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Quadrature step in minutes, overriding the scenario.
    #[arg(long)]
    dt: Option<f64>,
    /// Ramp every demand edge over this many minutes.
    #[arg(long, value_name = "RAMP")]
    smooth: Option<f64>,
}

#[derive(Debug, Args)]
struct ObjectiveArgs {
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Initial barrier weight.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Initial penalty sharpness.
    #[arg(long)]
    vartheta: Option<f64>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    objective: ObjectiveArgs,
    /// Continuation rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// zeros, separated or explicit:<schedule.json>
    #[arg(long)]
    init: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Acceptable constraint violation.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Schedule file written by `solve` or `init`, or a bare `{tau, alpha}` object.
    schedule: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Tolerance recorded in the violation report.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    objective: ObjectiveArgs,
    /// Number of random schedules.
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-2)]
    tol: f64,
}

#[derive(Debug, Args)]
struct InitArgs {
    #[command(flatten)]
    common: Common,
    /// zeros, separated or explicit:<schedule.json>
    #[arg(long)]
    init: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    tol: Option<f64>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Simulate(a) => simulate(a),
        Command::CheckGradients(a) => check(a),
        Command::Init(a) => init(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::InfeasibleStart | Error::NoFeasibleSeparation) {
                eprintln!("hint: barrier mode needs a strictly feasible start; try --mode penalty");
            }
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InfeasibleStart | Error::NoFeasibleSeparation => EXIT_INFEASIBLE_START,
        Error::Numeric(_) | Error::BarrierDomain { .. } => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

fn load(common: &Common) -> Result<Scenario> {
    let scenario = Scenario::load(&common.scenario)?;
    match common.smooth {
        Some(ramp) => scenario.smoothed(Smoothing {
            ramp,
            steps: SMOOTHING_STEPS,
        }),
        None => Ok(scenario),
    }
}

fn apply_objective(cfg: &mut SolverConfig, args: &ObjectiveArgs) {
    if let Some(m) = args.mode {
        cfg.mode = m.into();
    }
    if let Some(e) = args.epsilon {
        cfg.epsilon0 = e;
    }
    if let Some(v) = args.vartheta {
        cfg.vartheta0 = v;
    }
}

/// Reads a schedule written by `solve`/`init` (its `schedule` field) or a
/// bare `{tau, alpha}` object.
pub fn read_schedule(path: &Path) -> Result<Schedule> {
    let text = fs::read_to_string(path)?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(inner) = value.get_mut("schedule") {
        value = inner.take();
    }
    Ok(serde_json::from_value(value)?)
}

fn initializer(choice: Option<&str>, scenario: &Scenario) -> Result<Box<dyn Initializer>> {
    match choice {
        None => scenario.init().initializer(),
        Some(c) => match c.strip_prefix("explicit:") {
            Some(path) => Ok(Box::new(Explicit(read_schedule(Path::new(path))?))),
            None => InitializerRegistry::default().create(c),
        },
    }
}

#[derive(Debug, Serialize)]
struct RoundSummary<'a> {
    objective: &'a str,
    parameter: f64,
    iterations: usize,
    termination: Termination,
    initial_cost: f64,
    final_cost: f64,
    max_violation: f64,
}

#[derive(Debug, Serialize)]
struct ScheduleReport<'a> {
    schema_version: u32,
    mode: Option<&'a str>,
    init: &'a str,
    initial_total_delay_cost: f64,
    total_delay_cost: f64,
    per_demand_delay: Vec<f64>,
    max_violation: f64,
    iterations: usize,
    rounds: Vec<RoundSummary<'a>>,
    schedule: &'a Schedule,
}

#[derive(Debug, Serialize)]
struct RowEntry {
    row: usize,
    label: String,
    max_excess: f64,
    time: f64,
}

#[derive(Debug, Serialize)]
struct ViolationFile {
    schema_version: u32,
    tolerance: f64,
    feasible: bool,
    max_violation: f64,
    rows: Vec<RowEntry>,
}

fn row_label(scenario: &Scenario, row: usize) -> String {
    let m = scenario.problem.model();
    let c = m.c().row(row);
    let nonzero: Vec<usize> = (0..c.len()).filter(|&j| c[j] != 0.0).collect();
    if let [j] = nonzero[..] {
        if let Some(k) = scenario.outputs.states.iter().position(|&s| s == j) {
            let name = &scenario.outputs.names[k];
            let d = m.d()[row];
            if c[j] == 1.0 {
                return format!("{name} <= {d}");
            }
            if c[j] == -1.0 {
                return format!("{name} >= {}", -d);
            }
        }
    }
    format!("row {row}")
}

fn violation_file(scenario: &Scenario, report: &ViolationReport) -> ViolationFile {
    ViolationFile {
        schema_version: 1,
        tolerance: report.tolerance,
        feasible: report.feasible,
        max_violation: report.max_violation(),
        rows: report
            .rows
            .iter()
            .map(|r| RowEntry {
                row: r.row,
                label: row_label(scenario, r.row),
                max_excess: r.max_excess,
                time: r.time,
            })
            .collect(),
    }
}

fn csv_header(outputs: &OutputMap, scenario: &Scenario) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend(outputs.names.iter().cloned());
    cols.extend((1..=scenario.problem.model().inputs()).map(|j| format!("u{j}")));
    for (i, d) in scenario.problem.demands().iter().enumerate() {
        if d.profile.channels() == 1 {
            cols.push(format!("w{}", i + 1));
        } else {
            cols.extend((1..=d.profile.channels()).map(|c| format!("w{}_{c}", i + 1)));
        }
    }
    cols.join(",")
}

/// Samples at every quadrature node: time, outputs, total inputs and the
/// delayed demand flows.
pub fn trajectory_csv(scenario: &Scenario, ev: &GridEvaluator, schedule: &Schedule) -> Result<String> {
    let states = ev.states(schedule)?;
    let problem = &scenario.problem;
    let u0 = problem.model().u0();
    let slots = problem.slots();
    let mut out = csv_header(&scenario.outputs, scenario);
    out.push('\n');
    for (q, x) in states.iter().enumerate() {
        let t = ev.grid().time(q);
        let mut row = vec![t];
        row.extend(scenario.outputs.states.iter().map(|&j| x[j]));
        let k = ((t / problem.sampling()).floor() as usize).min(slots - 1);
        row.extend((0..u0.len()).map(|j| u0[j] + schedule.alpha[(j, k)]));
        for (d, &tau) in problem.demands().iter().zip(schedule.tau.iter()) {
            row.extend(d.profile.value_at(t - tau).iter());
        }
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

fn trace_csv(report: &SolveReport) -> String {
    let mut out = String::from("round,iteration,parameter,cost,grad_norm\n");
    for (r, round) in report.rounds.iter().enumerate() {
        for (i, cost) in round.cost_trace.iter().enumerate() {
            let g = round.grad_norm_trace.get(i).map_or(String::new(), |g| g.to_string());
            writeln!(out, "{r},{i},{},{cost},{g}", round.parameter).expect("writing to a String");
        }
    }
    out
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_artifacts(
    out: &Path,
    scenario: &Scenario,
    ev: &GridEvaluator,
    report: &ScheduleReport<'_>,
    violations: &ViolationReport,
) -> Result<()> {
    fs::create_dir_all(out)?;
    write_json(&out.join("schedule.json"), report)?;
    fs::write(out.join("trajectory.csv"), trajectory_csv(scenario, ev, report.schedule)?)?;
    write_json(&out.join("violations.json"), &violation_file(scenario, violations))?;
    Ok(())
}

fn print_violations(report: &ViolationReport) {
    println!(
        "max violation {} (tolerance {}), {} violated row(s)",
        report.max_violation(),
        report.tolerance,
        report.violated_rows().count()
    );
}

fn solve(args: SolveArgs) -> Result<i32> {
    let scenario = load(&args.common)?;
    let mut cfg = scenario.solver().clone();
    apply_objective(&mut cfg, &args.objective);
    if let Some(r) = args.rounds {
        cfg.continuation_rounds = r;
    }
    if let Some(t) = args.tol {
        cfg.violation_tol = t;
    }
    cfg.validate()?;
    let ev = scenario.evaluator(args.common.dt)?;
    let init = initializer(args.init.as_deref(), &scenario)?;
    let start = init.initial(&ev)?;
    let strategy = StrategyRegistry::default().for_mode(cfg.mode)?;
    let report = strategy.solve(&ev, &start, &cfg, &mut |_| {})?;

    let (initial_delay, _) = total_delay_cost(&start, scenario.problem.demands());
    let summary = ScheduleReport {
        schema_version: 1,
        mode: Some(strategy.name()),
        init: init.name(),
        initial_total_delay_cost: initial_delay,
        total_delay_cost: report.total_delay_cost,
        per_demand_delay: report.per_demand_delay.clone(),
        max_violation: report.max_violation(),
        iterations: report.iterations(),
        rounds: report
            .rounds
            .iter()
            .map(|r| RoundSummary {
                objective: &r.objective,
                parameter: r.parameter,
                iterations: r.iterations,
                termination: r.termination,
                initial_cost: r.cost_trace[0],
                final_cost: r.final_cost,
                max_violation: r.max_violation,
            })
            .collect(),
        schedule: &report.schedule,
    };
    write_artifacts(&args.out, &scenario, &ev, &summary, &report.violation_report)?;
    fs::write(args.out.join("trace.csv"), trace_csv(&report))?;

    for r in &summary.rounds {
        println!(
            "{} {}: {} iterations, {:?}, cost {} -> {}, max violation {}",
            r.objective, r.parameter, r.iterations, r.termination, r.initial_cost, r.final_cost, r.max_violation
        );
    }
    println!("total delay cost {} (initial {initial_delay})", report.total_delay_cost);
    print_violations(&report.violation_report);
    println!("wrote {}", args.out.display());
    Ok(if report.max_violation() <= cfg.violation_tol {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    })
}

fn simulate(args: SimulateArgs) -> Result<i32> {
    let scenario = load(&args.common)?;
    let schedule = read_schedule(&args.schedule)?;
    scenario.problem.check_dimensions(&schedule)?;
    let tol = args.tol.unwrap_or(scenario.solver().violation_tol);
    let ev = scenario.evaluator(args.common.dt)?;
    let residuals = ev.residuals(&schedule)?;
    let violations = ev.violation_report(&residuals, tol);
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("trajectory.csv"), trajectory_csv(&scenario, &ev, &schedule)?)?;
    write_json(&args.out.join("violations.json"), &violation_file(&scenario, &violations))?;
    print_violations(&violations);
    println!("wrote {}", args.out.display());
    Ok(EXIT_OK)
}

fn check(args: CheckArgs) -> Result<i32> {
    let scenario = load(&args.common)?;
    let mut cfg = scenario.solver().clone();
    apply_objective(&mut cfg, &args.objective);
    let ev = scenario.evaluator(args.common.dt)?;
    let obj = ObjectiveRegistry::default().create(cfg.mode.as_str(), cfg.initial_parameter())?;
    let feasible = cfg.mode == Mode::Barrier;
    let result = check_gradients(&ev, obj.as_ref(), args.samples, args.seed, feasible)?;
    for (i, e) in result.errors.iter().enumerate() {
        println!("sample {i}: relative error {e:e}");
    }
    println!(
        "{} {}: worst relative error {:e} over {} samples (tolerance {:e})",
        result.objective,
        result.parameter,
        result.worst,
        result.errors.len(),
        args.tol
    );
    Ok(if result.worst <= args.tol { EXIT_OK } else { EXIT_NUMERIC })
}

fn init(args: InitArgs) -> Result<i32> {
    let scenario = load(&args.common)?;
    let tol = args.tol.unwrap_or(scenario.solver().violation_tol);
    let ev = scenario.evaluator(args.common.dt)?;
    let init = initializer(args.init.as_deref(), &scenario)?;
    let schedule = init.initial(&ev)?;
    let residuals = ev.residuals(&schedule)?;
    let violations = ev.violation_report(&residuals, tol);
    let (delay, _) = total_delay_cost(&schedule, scenario.problem.demands());
    let summary = ScheduleReport {
        schema_version: 1,
        mode: None,
        init: init.name(),
        initial_total_delay_cost: delay,
        total_delay_cost: delay,
        per_demand_delay: schedule.tau.iter().copied().collect(),
        max_violation: violations.max_violation(),
        iterations: 0,
        rounds: Vec::new(),
        schedule: &schedule,
    };
    write_artifacts(&args.out, &scenario, &ev, &summary, &violations)?;
    println!("{} schedule, total delay cost {delay}", init.name());
    print_violations(&violations);
    println!("wrote {}", args.out.display());
    Ok(EXIT_OK)
}
