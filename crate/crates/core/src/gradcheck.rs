//! Finite-difference checks of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::objectives::{Gradient, GridEvaluator, Objective};
use crate::problem::Schedule;
use crate::solver::feasible_init;

/// Relative central-difference step: `h = FD_STEP * (1 + |x|)`.
pub const FD_STEP: f64 = 1e-4;

/// Central differences of the objective's cost in every coordinate.
pub fn finite_difference_gradient(obj: &dyn Objective, ev: &GridEvaluator, s: &Schedule) -> Result<Gradient> {
    let f = |s: &Schedule| -> Result<f64> { Ok(obj.cost(ev, s)?.total) };
    let mut g = Gradient::zeros_like(s);
    for i in 0..s.tau.len() {
        let h = FD_STEP * (1.0 + s.tau[i].abs());
        let (mut up, mut dn) = (s.clone(), s.clone());
        up.tau[i] += h;
        dn.tau[i] -= h;
        g.tau[i] = (f(&up)? - f(&dn)?) / (2.0 * h);
    }
    for j in 0..s.alpha.len() {
        let h = FD_STEP * (1.0 + s.alpha[j].abs());
        let (mut up, mut dn) = (s.clone(), s.clone());
        up.alpha[j] += h;
        dn.alpha[j] -= h;
        g.alpha[j] = (f(&up)? - f(&dn)?) / (2.0 * h);
    }
    Ok(g)
}

/// `|analytic - reference| / |reference|` over all coordinates; zero when
/// both vanish.
pub fn relative_error(analytic: &Gradient, reference: &Gradient) -> f64 {
    let diff = (&analytic.tau - &reference.tau).norm_squared() + (&analytic.alpha - &reference.alpha).norm_squared();
    let scale = reference.norm();
    if diff == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

/// Uniform draw from the decision boxes.
pub fn random_in_box(ev: &GridEvaluator, rng: &mut impl Rng) -> Schedule {
    let p = ev.problem();
    let mut s = Schedule::zeros(p.demands().len(), p.model().inputs(), p.slots());
    for (t, d) in s.tau.iter_mut().zip(p.demands()) {
        *t = if d.tau_hi > d.tau_lo { rng.gen_range(d.tau_lo..=d.tau_hi) } else { d.tau_lo };
    }
    for j in 0..s.alpha.nrows() {
        let (lo, hi) = (p.u_lo()[j], p.u_hi()[j]);
        for k in 0..s.alpha.ncols() {
            s.alpha[(j, k)] = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        }
    }
    s
}

/// Strictly feasible random schedule: a uniform box draw pulled towards the
/// separated initializer until every node has slack.
pub fn random_feasible(ev: &GridEvaluator, anchor: &Schedule, rng: &mut impl Rng) -> Result<Schedule> {
    let worst = ev.residuals(anchor)?.max();
    if worst >= 0.0 {
        return Err(Error::InfeasibleStart);
    }
    let target = random_in_box(ev, rng);
    let mut weight = 1.0;
    for _ in 0..60 {
        let s = Schedule::new(
            &anchor.tau + (&target.tau - &anchor.tau) * weight,
            &anchor.alpha + (&target.alpha - &anchor.alpha) * weight,
        );
        if ev.residuals(&s)?.max() < 0.5 * worst {
            return Ok(s);
        }
        weight *= 0.5;
    }
    Ok(anchor.clone())
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    pub objective: String,
    pub parameter: f64,
    pub errors: Vec<f64>,
    pub worst: f64,
}

/// Compares analytic and finite-difference gradients at `samples` random
/// schedules; feasible ones when `feasible` is set.
pub fn check_gradients(
    ev: &GridEvaluator,
    obj: &dyn Objective,
    samples: usize,
    seed: u64,
    feasible: bool,
) -> Result<GradientCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchor = if feasible { Some(feasible_init(ev, None)?) } else { None };
    let mut errors = Vec::with_capacity(samples);
    for _ in 0..samples {
        let s = match &anchor {
            Some(a) => random_feasible(ev, a, &mut rng)?,
            None => random_in_box(ev, &mut rng),
        };
        let g = obj.gradient(ev, &s)?;
        let fd = finite_difference_gradient(obj, ev, &s)?;
        errors.push(relative_error(&g, &fd));
    }
    let worst = errors.iter().copied().fold(0.0, f64::max);
    Ok(GradientCheck {
        objective: obj.name().to_string(),
        parameter: obj.parameter(),
        errors,
        worst,
    })
}
