//! Projected gradient descent over the delay and control boxes, with an
//! Armijo backtracking search along the projection arc and continuation in
//! the barrier weight or penalty sharpness.

mod init;
mod registry;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use init::{feasible_init, Explicit, InitSpec, Initializer, InitializerRegistry, Separated, Zeros};
pub use registry::{BarrierContinuation, PenaltyContinuation, Strategy, StrategyRegistry};

use crate::error::{domain, Error, Result};
use crate::objectives::{Gradient, GridEvaluator, Objective};
use crate::problem::{total_delay_cost, Schedule, ScheduleProblem, ViolationReport};

/// Steps below this count as a stalled line search.
pub const MIN_STEP: f64 = 1e-12;

/// Consecutive small improvements that end a round.
pub const SMALL_IMPROVEMENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Barrier,
    Penalty,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Barrier => "barrier",
            Mode::Penalty => "penalty",
        }
    }
}

/// Per-variable metric of the gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepScaling {
    /// Every variable takes the same step.
    Uniform,
    /// Each variable's step is multiplied by its squared box width, so a unit
    /// step spans comparable fractions of every box.
    BoxWidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub mode: Mode,
    pub epsilon0: f64,
    pub vartheta0: f64,
    pub continuation_factor: f64,
    pub continuation_rounds: usize,
    pub ls_alpha: f64,
    pub ls_beta: f64,
    pub step0: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
    pub violation_tol: f64,
    pub step_scaling: StepScaling,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Barrier,
            epsilon0: 0.1,
            vartheta0: 100.0,
            continuation_factor: 10.0,
            continuation_rounds: 3,
            ls_alpha: 0.3,
            ls_beta: 0.5,
            step0: 1.0,
            tol_rel: 1e-6,
            max_iter: 2000,
            violation_tol: 1e-3,
            step_scaling: StepScaling::BoxWidth,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epsilon0", self.epsilon0),
            ("vartheta0", self.vartheta0),
            ("step0", self.step0),
            ("tol_rel", self.tol_rel),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.continuation_factor > 1.0) || !self.continuation_factor.is_finite() {
            return Err(domain(format!(
                "continuation_factor must exceed 1, got {}",
                self.continuation_factor
            )));
        }
        if self.continuation_rounds == 0 {
            return Err(domain("continuation_rounds must be at least 1"));
        }
        if !(self.ls_alpha > 0.0 && self.ls_alpha < 0.5) {
            return Err(domain(format!("ls_alpha must lie in (0, 0.5), got {}", self.ls_alpha)));
        }
        if !(self.ls_beta > 0.0 && self.ls_beta < 1.0) {
            return Err(domain(format!("ls_beta must lie in (0, 1), got {}", self.ls_beta)));
        }
        if self.max_iter == 0 {
            return Err(domain("max_iter must be at least 1"));
        }
        if !(self.violation_tol >= 0.0) || !self.violation_tol.is_finite() {
            return Err(domain(format!(
                "violation_tol must be non-negative, got {}",
                self.violation_tol
            )));
        }
        Ok(())
    }

    /// Starting parameter of the configured mode.
    pub fn initial_parameter(&self) -> f64 {
        match self.mode {
            Mode::Barrier => self.epsilon0,
            Mode::Penalty => self.vartheta0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Relative improvement stayed below `tol_rel` long enough.
    Converged,
    /// The line search found no acceptable step.
    Stalled,
    MaxIterations,
}

/// Outcome of one round at a fixed objective parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub objective: String,
    pub parameter: f64,
    pub schedule: Schedule,
    /// Cost at the start point followed by the cost after every iteration.
    pub cost_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub final_cost: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub schedule: Schedule,
    pub rounds: Vec<RoundReport>,
    pub violation_report: ViolationReport,
    pub per_demand_delay: Vec<f64>,
    pub total_delay_cost: f64,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.rounds.iter().map(|r| r.iterations).sum()
    }

    pub fn cost_trace(&self) -> impl Iterator<Item = f64> + '_ {
        self.rounds.iter().flat_map(|r| r.cost_trace.iter().copied())
    }

    /// `(parameter, final cost, max violation)` per round.
    pub fn continuation_history(&self) -> Vec<(f64, f64, f64)> {
        self.rounds
            .iter()
            .map(|r| (r.parameter, r.final_cost, r.max_violation))
            .collect()
    }

    pub fn max_violation(&self) -> f64 {
        self.violation_report.max_violation()
    }

    pub fn termination(&self) -> Option<Termination> {
        self.rounds.last().map(|r| r.termination)
    }
}

/// What an observer sees at every iterate where a gradient was evaluated.
#[derive(Debug)]
pub struct Iterate<'a> {
    pub round: usize,
    pub iteration: usize,
    pub schedule: &'a Schedule,
    pub cost: f64,
    pub gradient: &'a Gradient,
}

/// `P_lo^hi[x]`.
pub fn project_box(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo <= hi) {
        return Err(domain(format!("empty box [{lo}, {hi}]")));
    }
    Ok(x.clamp(lo, hi))
}

/// Per-variable step lengths of one update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSizes {
    pub tau: DVector<f64>,
    pub alpha: DMatrix<f64>,
}

impl StepSizes {
    pub fn uniform(step: f64, like: &Schedule) -> Self {
        Self {
            tau: DVector::from_element(like.tau.len(), step),
            alpha: DMatrix::from_element(like.alpha.nrows(), like.alpha.ncols(), step),
        }
    }

    /// Step metric of `scaling` for `problem`, before the line-search multiplier.
    pub fn metric(problem: &ScheduleProblem, scaling: StepScaling) -> Self {
        let m = problem.demands().len();
        let (n, k) = (problem.model().inputs(), problem.slots());
        match scaling {
            StepScaling::Uniform => Self {
                tau: DVector::from_element(m, 1.0),
                alpha: DMatrix::from_element(n, k, 1.0),
            },
            StepScaling::BoxWidth => {
                let width = |w: f64| if w > 0.0 { w * w } else { 1.0 };
                Self {
                    tau: DVector::from_iterator(
                        m,
                        problem.demands().iter().map(|d| width(d.tau_hi - d.tau_lo)),
                    ),
                    alpha: DMatrix::from_fn(n, k, |j, _| width(problem.u_hi()[j] - problem.u_lo()[j])),
                }
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            tau: &self.tau * factor,
            alpha: &self.alpha * factor,
        }
    }
}

/// Projected update `P[x - steps .* grad]`, component-wise in both boxes.
pub fn gradient_step(
    problem: &ScheduleProblem,
    schedule: &Schedule,
    grad: &Gradient,
    steps: &StepSizes,
) -> Schedule {
    let mut out = schedule.clone();
    for (i, d) in problem.demands().iter().enumerate() {
        out.tau[i] = (schedule.tau[i] - steps.tau[i] * grad.tau[i]).clamp(d.tau_lo, d.tau_hi);
    }
    for j in 0..out.alpha.nrows() {
        let (lo, hi) = (problem.u_lo()[j], problem.u_hi()[j]);
        for k in 0..out.alpha.ncols() {
            let x = schedule.alpha[(j, k)] - steps.alpha[(j, k)] * grad.alpha[(j, k)];
            out.alpha[(j, k)] = x.clamp(lo, hi);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub schedule: Schedule,
    /// Accepted multiplier; zero when the search stalled.
    pub step: f64,
    pub cost: f64,
    pub evaluations: usize,
}

/// Backtracking from `cfg.step0` until
/// `f(trial) <= f(x) - ls_alpha / step * |trial - x|^2`, the norm taken in
/// the metric of `metric`.
pub fn line_search(
    ev: &GridEvaluator,
    objective: &dyn Objective,
    schedule: &Schedule,
    current: f64,
    grad: &Gradient,
    metric: &StepSizes,
    cfg: &SolverConfig,
) -> Result<LineSearchOutcome> {
    line_search_with(ev.problem(), schedule, current, grad, metric, cfg, |s| {
        Ok(objective.cost(ev, s)?.total)
    })
}

#[allow(clippy::too_many_arguments)]
fn line_search_from(
    ev: &GridEvaluator,
    objective: &dyn Objective,
    schedule: &Schedule,
    current: f64,
    grad: &Gradient,
    metric: &StepSizes,
    cfg: &SolverConfig,
    start: f64,
) -> Result<LineSearchOutcome> {
    backtrack(ev.problem(), schedule, current, grad, metric, cfg, start, |s| {
        Ok(objective.cost(ev, s)?.total)
    })
}

/// [`line_search`] over an arbitrary cost of the schedule.
pub fn line_search_with<F>(
    problem: &ScheduleProblem,
    schedule: &Schedule,
    current: f64,
    grad: &Gradient,
    metric: &StepSizes,
    cfg: &SolverConfig,
    cost: F,
) -> Result<LineSearchOutcome>
where
    F: FnMut(&Schedule) -> Result<f64>,
{
    backtrack(problem, schedule, current, grad, metric, cfg, cfg.step0, cost)
}

#[allow(clippy::too_many_arguments)]
fn backtrack<F>(
    problem: &ScheduleProblem,
    schedule: &Schedule,
    current: f64,
    grad: &Gradient,
    metric: &StepSizes,
    cfg: &SolverConfig,
    start: f64,
    mut cost: F,
) -> Result<LineSearchOutcome>
where
    F: FnMut(&Schedule) -> Result<f64>,
{
    if !current.is_finite() {
        return Err(Error::InfeasibleStart);
    }
    let stall = |evaluations| LineSearchOutcome {
        schedule: schedule.clone(),
        step: 0.0,
        cost: current,
        evaluations,
    };
    let mut step = start;
    let mut evaluations = 0;
    while step >= MIN_STEP {
        let trial = gradient_step(problem, schedule, grad, &metric.scaled(step));
        let dt = &trial.tau - &schedule.tau;
        let da = &trial.alpha - &schedule.alpha;
        let dist2 = dt.component_div(&metric.tau).dot(&dt) + da.component_div(&metric.alpha).dot(&da);
        if dist2 == 0.0 {
            return Ok(stall(evaluations));
        }
        let value = cost(&trial)?;
        evaluations += 1;
        if value <= current - cfg.ls_alpha / step * dist2 {
            return Ok(LineSearchOutcome {
                schedule: trial,
                step,
                cost: value,
                evaluations,
            });
        }
        step *= cfg.ls_beta;
    }
    Ok(stall(evaluations))
}

/// Projected gradient iterations at a fixed objective.
pub fn solve_round(
    ev: &GridEvaluator,
    init: &Schedule,
    objective: &dyn Objective,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(&Iterate<'_>),
    round: usize,
) -> Result<RoundReport> {
    let problem = ev.problem();
    problem.check_dimensions(init)?;
    let metric = StepSizes::metric(problem, cfg.step_scaling);
    let mut schedule = problem.project(init);
    let mut cost = objective.cost(ev, &schedule)?.total;
    if !cost.is_finite() {
        return Err(Error::InfeasibleStart);
    }
    let mut cost_trace = vec![cost];
    let mut grad_norm_trace = Vec::new();
    let mut small = 0;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    // each search starts one expansion above the last accepted step
    let mut start = cfg.step0;
    while iterations < cfg.max_iter {
        let grad = objective.gradient(ev, &schedule)?;
        grad_norm_trace.push(grad.norm());
        observer(&Iterate {
            round,
            iteration: iterations,
            schedule: &schedule,
            cost,
            gradient: &grad,
        });
        let mut ls = line_search_from(ev, objective, &schedule, cost, &grad, &metric, cfg, start)?;
        if ls.step == 0.0 && start < cfg.step0 {
            ls = line_search(ev, objective, &schedule, cost, &grad, &metric, cfg)?;
        }
        if ls.step == 0.0 {
            termination = Termination::Stalled;
            break;
        }
        start = (ls.step / cfg.ls_beta).min(cfg.step0);
        iterations += 1;
        let improvement = (cost - ls.cost) / cost.abs().max(f64::MIN_POSITIVE);
        schedule = ls.schedule;
        cost = ls.cost;
        cost_trace.push(cost);
        if !problem.in_boxes(&schedule) {
            return Err(Error::Numeric(format!("iterate {iterations} left the decision boxes")));
        }
        small = if improvement < cfg.tol_rel { small + 1 } else { 0 };
        if small >= SMALL_IMPROVEMENTS {
            termination = Termination::Converged;
            break;
        }
    }
    let residuals = ev.residuals(&schedule)?;
    Ok(RoundReport {
        objective: objective.name().to_string(),
        parameter: objective.parameter(),
        schedule,
        cost_trace,
        grad_norm_trace,
        iterations,
        termination,
        final_cost: cost,
        max_violation: residuals.max().max(0.0),
    })
}

/// Rounds at the objective's parameter and its successors, warm-started,
/// until `rounds` are done or `stop` accepts a round.
pub fn solve_continuation(
    ev: &GridEvaluator,
    init: &Schedule,
    first: Box<dyn Objective>,
    cfg: &SolverConfig,
    stop: &dyn Fn(&RoundReport) -> bool,
    observer: &mut dyn FnMut(&Iterate<'_>),
) -> Result<SolveReport> {
    cfg.validate()?;
    let mut objective = first;
    let mut schedule = init.clone();
    let mut rounds = Vec::new();
    for r in 0..cfg.continuation_rounds {
        let report = solve_round(ev, &schedule, objective.as_ref(), cfg, observer, r)?;
        schedule = report.schedule.clone();
        let done = stop(&report);
        rounds.push(report);
        if done {
            break;
        }
        objective = objective.next_round(cfg.continuation_factor);
    }
    finish(ev, schedule, rounds, cfg.violation_tol)
}

fn finish(ev: &GridEvaluator, schedule: Schedule, rounds: Vec<RoundReport>, tol: f64) -> Result<SolveReport> {
    let residuals = ev.residuals(&schedule)?;
    let violation_report = ev.violation_report(&residuals, tol);
    let (total, _) = total_delay_cost(&schedule, ev.problem().demands());
    Ok(SolveReport {
        per_demand_delay: schedule.tau.iter().copied().collect(),
        total_delay_cost: total,
        schedule,
        rounds,
        violation_report,
    })
}

/// Barrier rounds at `epsilon0`, `epsilon0 / factor`, ...
pub fn solve_barrier_continuation(ev: &GridEvaluator, init: &Schedule, cfg: &SolverConfig) -> Result<SolveReport> {
    BarrierContinuation.solve(ev, init, cfg, &mut |_| {})
}

/// Penalty rounds at `vartheta0`, `vartheta0 * factor`, ... stopping once the
/// violation is within `violation_tol`.
pub fn solve_penalty_continuation(ev: &GridEvaluator, init: &Schedule, cfg: &SolverConfig) -> Result<SolveReport> {
    PenaltyContinuation.solve(ev, init, cfg, &mut |_| {})
}
