//! Fixed-step classical RK4 integration of the plant, kept independent of the
//! matrix-exponential machinery so tests can use it as a reference.

use nalgebra::DVector;

use super::model::StateSpaceModel;
use super::signal::PiecewiseSignal;
use crate::error::{dim, domain, Result};

/// A demand profile entering through `channel`, delayed by `delay`.
#[derive(Debug, Clone, Copy)]
pub struct DelayedLoad<'a> {
    pub channel: usize,
    pub signal: &'a PiecewiseSignal,
    pub delay: f64,
}

#[derive(Debug, Clone)]
pub struct SampledTrajectory {
    pub step: f64,
    pub states: Vec<DVector<f64>>,
}

impl SampledTrajectory {
    pub fn time(&self, q: usize) -> f64 {
        q as f64 * self.step
    }

    /// Sample nearest to `t`.
    pub fn at(&self, t: f64) -> &DVector<f64> {
        let q = ((t / self.step).round() as usize).min(self.states.len() - 1);
        &self.states[q]
    }
}

/// Integrates `x' = A x + B u(t) + sum E_c w(t - delay)` on `[0, horizon]`
/// with step `step`. `u` is the total input. Steps are split at every input
/// discontinuity so each RK4 sub-step sees a constant input.
pub fn simulate_ode_oracle(
    model: &StateSpaceModel,
    u: &PiecewiseSignal,
    loads: &[DelayedLoad<'_>],
    horizon: f64,
    step: f64,
) -> Result<SampledTrajectory> {
    if !(step > 0.0) || !(horizon > 0.0) {
        return Err(domain("oracle step and horizon must be positive"));
    }
    if u.channels() != model.inputs() {
        return Err(dim("oracle input has the wrong dimension"));
    }
    for l in loads {
        let e = model
            .load_map(l.channel)
            .ok_or_else(|| dim("oracle load channel out of range"))?;
        if e.ncols() != l.signal.channels() {
            return Err(dim("oracle load has the wrong dimension"));
        }
    }

    let mut jumps: Vec<f64> = u.breakpoints().to_vec();
    for l in loads {
        jumps.extend(l.signal.breakpoints().iter().map(|b| b + l.delay));
    }
    jumps.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let forcing = |t: f64| -> DVector<f64> {
        let mut f = model.b() * u.value_at(t);
        for l in loads {
            f += &model.load_maps()[l.channel] * l.signal.value_at(t - l.delay);
        }
        f
    };
    let a = model.a();
    let rk4 = |x: &DVector<f64>, f: &DVector<f64>, h: f64| -> DVector<f64> {
        let k1 = a * x + f;
        let k2 = a * (x + &k1 * (0.5 * h)) + f;
        let k3 = a * (x + &k2 * (0.5 * h)) + f;
        let k4 = a * (x + &k3 * h) + f;
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    };

    let steps = (horizon / step).round() as usize;
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = model.x0().clone();
    states.push(x.clone());
    let mut next_jump = 0;
    for q in 0..steps {
        let t0 = q as f64 * step;
        let t1 = (q + 1) as f64 * step;
        while next_jump < jumps.len() && jumps[next_jump] <= t0 {
            next_jump += 1;
        }
        let mut t = t0;
        let mut j = next_jump;
        while t < t1 {
            let end = if j < jumps.len() && jumps[j] < t1 { jumps[j] } else { t1 };
            j += 1;
            if end <= t {
                continue;
            }
            let f = forcing(0.5 * (t + end));
            x = rk4(&x, &f, end - t);
            t = end;
        }
        states.push(x.clone());
    }
    Ok(SampledTrajectory { step, states })
}
