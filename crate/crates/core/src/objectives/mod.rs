//! Augmented objectives: delay penalties plus an integral treatment of the
//! state constraints, with gradients assembled from the analytic
//! sensitivities of the superposed trajectory.
//!
//! For a residual `r = C_z x(t) - d_z` each treatment supplies an integrand
//! `g(r)` and its slope `g'(r)`. The gradient with respect to a delay is
//! `h'(tau) - sum_z int g'(r) C_z (A x_v(t - tau) + E v(t - tau)) dt` and with
//! respect to a control deviation `sum_z int g'(r) C_z x_u(t) dt`, both
//! discretised with the same trapezoid rule as the cost.

mod grid;
mod registry;

use std::fmt;

use nalgebra::{DMatrix, DVector};

pub use grid::{DemandRates, GridEvaluator, QuadratureGrid, Residuals};
pub use registry::ObjectiveRegistry;

use crate::error::{domain, Error, Result};
use crate::problem::{total_delay_cost, Schedule};

/// Exponent ceiling of the soft penalty; larger exponents are clipped.
pub const EXPONENT_CLIP: f64 = 700.0;

/// Cost split into its delay and constraint parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostValue {
    pub total: f64,
    pub delay: f64,
    pub constraint: f64,
    /// Some exponent hit [`EXPONENT_CLIP`].
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub tau: DVector<f64>,
    pub alpha: DMatrix<f64>,
}

impl Gradient {
    pub fn zeros_like(s: &Schedule) -> Self {
        Self {
            tau: DVector::zeros(s.tau.len()),
            alpha: DMatrix::zeros(s.alpha.nrows(), s.alpha.ncols()),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.tau.norm_squared() + self.alpha.norm_squared()).sqrt()
    }
}

/// A constraint treatment turned into a scalar objective over schedules.
pub trait Objective: Send + Sync + fmt::Debug {
    /// Registry name.
    fn name(&self) -> &'static str;

    /// Weight (`epsilon`) or sharpness (`vartheta`) parameter.
    fn parameter(&self) -> f64;

    /// Integrand for one residual; `+inf` outside the treatment's domain.
    fn integrand(&self, residual: f64) -> f64;

    /// Derivative of [`integrand`](Self::integrand); `None` outside the domain.
    fn slope(&self, residual: f64) -> Option<f64>;

    fn saturates(&self, _residual: f64) -> bool {
        false
    }

    /// Objective for the next continuation round.
    fn next_round(&self, factor: f64) -> Box<dyn Objective>;

    fn cost(&self, ev: &GridEvaluator, schedule: &Schedule) -> Result<CostValue> {
        let residuals = ev.residuals(schedule)?;
        Ok(self.cost_from(ev, schedule, &residuals))
    }

    fn cost_from(&self, ev: &GridEvaluator, schedule: &Schedule, residuals: &Residuals) -> CostValue {
        let (delay, _) = total_delay_cost(schedule, ev.problem().demands());
        let grid = ev.grid();
        let mut constraint = 0.0;
        let mut saturated = false;
        for q in 0..grid.nodes() {
            let w = grid.weight(q);
            for &r in residuals.node(q) {
                constraint += w * self.integrand(r);
                saturated |= self.saturates(r);
            }
        }
        CostValue {
            total: delay + constraint,
            delay,
            constraint,
            saturated,
        }
    }

    fn gradient(&self, ev: &GridEvaluator, schedule: &Schedule) -> Result<Gradient> {
        let (residuals, rates) = ev.residuals_with_rates(schedule)?;
        let grid = ev.grid();
        let p = residuals.rows();
        let mut weights = vec![0.0; grid.nodes() * p];
        for q in 0..grid.nodes() {
            let w = grid.weight(q);
            for (z, &r) in residuals.node(q).iter().enumerate() {
                let slope = self
                    .slope(r)
                    .ok_or(Error::BarrierDomain { time: grid.time(q) })?;
                weights[q * p + z] = w * slope;
            }
        }
        let (_, mut tau) = total_delay_cost(schedule, ev.problem().demands());
        for (l, rate) in rates.iter().enumerate() {
            let s: f64 = weights.iter().zip(&rate.values).map(|(w, v)| w * v).sum();
            tau[l] -= s;
        }
        let alpha = ev.control_sensitivities(&weights);
        Ok(Gradient { tau, alpha })
    }
}

/// `-epsilon * log(-r)`: finite only strictly inside the feasible set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogBarrier {
    epsilon: f64,
}

impl LogBarrier {
    pub const NAME: &'static str = "barrier";

    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(domain(format!("barrier weight must be positive, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Objective for LogBarrier {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn parameter(&self) -> f64 {
        self.epsilon
    }

    fn integrand(&self, r: f64) -> f64 {
        if r < 0.0 {
            -self.epsilon * (-r).ln()
        } else {
            f64::INFINITY
        }
    }

    fn slope(&self, r: f64) -> Option<f64> {
        (r < 0.0).then(|| self.epsilon / -r)
    }

    fn next_round(&self, factor: f64) -> Box<dyn Objective> {
        Box::new(Self {
            epsilon: self.epsilon / factor,
        })
    }
}

/// `exp(vartheta * r)` with the exponent clipped at [`EXPONENT_CLIP`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpPenalty {
    vartheta: f64,
}

impl ExpPenalty {
    pub const NAME: &'static str = "penalty";

    pub fn new(vartheta: f64) -> Result<Self> {
        if !(vartheta > 0.0) || !vartheta.is_finite() {
            return Err(domain(format!("penalty sharpness must be positive, got {vartheta}")));
        }
        Ok(Self { vartheta })
    }

    pub fn vartheta(&self) -> f64 {
        self.vartheta
    }
}

impl Objective for ExpPenalty {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn parameter(&self) -> f64 {
        self.vartheta
    }

    fn integrand(&self, r: f64) -> f64 {
        (self.vartheta * r).min(EXPONENT_CLIP).exp()
    }

    fn slope(&self, r: f64) -> Option<f64> {
        Some(self.vartheta * (self.vartheta * r).min(EXPONENT_CLIP).exp())
    }

    fn saturates(&self, r: f64) -> bool {
        self.vartheta * r > EXPONENT_CLIP
    }

    fn next_round(&self, factor: f64) -> Box<dyn Objective> {
        Box::new(Self {
            vartheta: self.vartheta * factor,
        })
    }
}
