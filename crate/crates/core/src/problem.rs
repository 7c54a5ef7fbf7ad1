//! Data model of the scheduling problem: rigid demands with shiftable delays,
//! the decision variables and their boxes, and superposed trajectories.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim, domain, Result};
use crate::lti::{BasisResponses, LoadProfile, PiecewiseSignal, StateSpaceModel};
use crate::objectives::GridEvaluator;

/// Delay sensitivity `h_i(tau)` of one customer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawPenalty")]
pub enum PenaltySpec {
    /// `h(tau) = tau`
    #[default]
    Linear,
    /// `h(tau) = weight * tau`
    WeightedLinear { weight: f64 },
    /// `h(tau) = weight * (tau - reference)^2`
    Quadratic { weight: f64, reference: f64 },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPenalty {
    kind: String,
    weight: Option<f64>,
    reference: Option<f64>,
}

impl TryFrom<RawPenalty> for PenaltySpec {
    type Error = String;

    fn try_from(raw: RawPenalty) -> std::result::Result<Self, String> {
        let spec = match (raw.kind.as_str(), raw.weight, raw.reference) {
            ("linear", None, None) => PenaltySpec::Linear,
            ("weighted_linear", Some(weight), None) => PenaltySpec::WeightedLinear { weight },
            ("quadratic", Some(weight), Some(reference)) => PenaltySpec::Quadratic { weight, reference },
            ("linear" | "weighted_linear" | "quadratic", _, _) => {
                return Err(format!(
                    "penalty kind `{}` takes {}",
                    raw.kind,
                    match raw.kind.as_str() {
                        "linear" => "no parameters",
                        "weighted_linear" => "exactly `weight`",
                        _ => "`weight` and `reference`",
                    }
                ))
            }
            (other, _, _) => return Err(format!("unknown penalty kind `{other}`")),
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

impl PenaltySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PenaltySpec::Linear => Ok(()),
            PenaltySpec::WeightedLinear { weight } | PenaltySpec::Quadratic { weight, .. }
                if !(weight > 0.0) || !weight.is_finite() =>
            {
                Err(domain(format!("penalty weight must be positive, got {weight}")))
            }
            PenaltySpec::Quadratic { reference, .. } if !reference.is_finite() => {
                Err(domain("quadratic penalty reference must be finite"))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, tau: f64) -> f64 {
        match *self {
            PenaltySpec::Linear => tau,
            PenaltySpec::WeightedLinear { weight } => weight * tau,
            PenaltySpec::Quadratic { weight, reference } => weight * (tau - reference).powi(2),
        }
    }

    pub fn slope(&self, tau: f64) -> f64 {
        match *self {
            PenaltySpec::Linear => 1.0,
            PenaltySpec::WeightedLinear { weight } => weight,
            PenaltySpec::Quadratic { weight, reference } => 2.0 * weight * (tau - reference),
        }
    }
}

/// A rigid load request: `profile` may only be delayed by some `tau` in
/// `[tau_lo, tau_hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandRequest {
    pub profile: PiecewiseSignal,
    pub channel: usize,
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub penalty: PenaltySpec,
}

impl DemandRequest {
    pub fn new(
        profile: PiecewiseSignal,
        channel: usize,
        tau_lo: f64,
        tau_hi: f64,
        penalty: PenaltySpec,
    ) -> Result<Self> {
        if !tau_lo.is_finite() || !tau_hi.is_finite() {
            return Err(domain("delay bounds must be finite"));
        }
        if tau_lo < 0.0 {
            return Err(domain(format!("tau_lo must be >= 0, got {tau_lo}")));
        }
        if tau_lo > tau_hi {
            return Err(domain(format!("tau_lo = {tau_lo} exceeds tau_hi = {tau_hi}")));
        }
        penalty.validate()?;
        Ok(Self {
            profile,
            channel,
            tau_lo,
            tau_hi,
            penalty,
        })
    }

    pub fn load(&self) -> LoadProfile {
        LoadProfile {
            channel: self.channel,
            signal: self.profile.clone(),
        }
    }
}

/// Decision variables: one delay per demand and the control deviations
/// `alpha[(input, slot)]` held on each sampling interval.
///
/// Serialized as `{"tau": [...], "alpha": [[slot values of input 0], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "RawSchedule", try_from = "RawSchedule")]
pub struct Schedule {
    pub tau: DVector<f64>,
    pub alpha: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    tau: Vec<f64>,
    alpha: Vec<Vec<f64>>,
}

impl From<Schedule> for RawSchedule {
    fn from(s: Schedule) -> Self {
        Self {
            tau: s.tau.iter().copied().collect(),
            alpha: s.alpha.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

impl TryFrom<RawSchedule> for Schedule {
    type Error = String;

    fn try_from(raw: RawSchedule) -> std::result::Result<Self, String> {
        let slots = raw.alpha.first().map_or(0, Vec::len);
        if raw.alpha.iter().any(|r| r.len() != slots) {
            return Err("alpha rows must all have the same length".into());
        }
        if raw.tau.iter().chain(raw.alpha.iter().flatten()).any(|v| !v.is_finite()) {
            return Err("schedule entries must be finite".into());
        }
        let alpha = DMatrix::from_fn(raw.alpha.len(), slots, |i, k| raw.alpha[i][k]);
        Ok(Self::new(DVector::from_vec(raw.tau), alpha))
    }
}

impl Schedule {
    pub fn new(tau: DVector<f64>, alpha: DMatrix<f64>) -> Self {
        Self { tau, alpha }
    }

    pub fn zeros(demands: usize, inputs: usize, slots: usize) -> Self {
        Self {
            tau: DVector::zeros(demands),
            alpha: DMatrix::zeros(inputs, slots),
        }
    }

    pub fn len(&self) -> usize {
        self.tau.len() + self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The complete scheduling problem.
#[derive(Debug, Clone)]
pub struct ScheduleProblem {
    model: StateSpaceModel,
    demands: Vec<DemandRequest>,
    horizon: f64,
    sampling: f64,
    u_lo: DVector<f64>,
    u_hi: DVector<f64>,
}

impl ScheduleProblem {
    pub fn new(
        model: StateSpaceModel,
        demands: Vec<DemandRequest>,
        horizon: f64,
        sampling: f64,
        u_lo: DVector<f64>,
        u_hi: DVector<f64>,
    ) -> Result<Self> {
        if demands.is_empty() {
            return Err(domain("at least one demand is required"));
        }
        if model.constraints() == 0 {
            return Err(domain("at least one state constraint row is required"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(domain(format!("horizon must be positive, got {horizon}")));
        }
        if !(sampling > 0.0) || sampling > horizon {
            return Err(domain(format!("sampling must lie in (0, horizon], got {sampling}")));
        }
        if u_lo.len() != model.inputs() || u_hi.len() != model.inputs() {
            return Err(dim(format!(
                "input deviation bounds need {} entries",
                model.inputs()
            )));
        }
        for j in 0..u_lo.len() {
            if !(u_lo[j] <= u_hi[j]) {
                return Err(domain(format!(
                    "u_lo[{j}] = {} exceeds u_hi[{j}] = {}",
                    u_lo[j], u_hi[j]
                )));
            }
        }
        for (i, d) in demands.iter().enumerate() {
            let e = model.load_map(d.channel).ok_or_else(|| {
                dim(format!("demand {i} targets missing load channel {}", d.channel))
            })?;
            if e.ncols() != d.profile.channels() {
                return Err(dim(format!(
                    "demand {i} has {} components, load channel {} takes {}",
                    d.profile.channels(),
                    d.channel,
                    e.ncols()
                )));
            }
            if d.profile.start() < 0.0 {
                return Err(domain(format!("demand {i} profile starts before t = 0")));
            }
        }
        Ok(Self {
            model,
            demands,
            horizon,
            sampling,
            u_lo,
            u_hi,
        })
    }

    pub fn model(&self) -> &StateSpaceModel {
        &self.model
    }
    pub fn demands(&self) -> &[DemandRequest] {
        &self.demands
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn sampling(&self) -> f64 {
        self.sampling
    }
    pub fn u_lo(&self) -> &DVector<f64> {
        &self.u_lo
    }
    pub fn u_hi(&self) -> &DVector<f64> {
        &self.u_hi
    }

    pub fn slots(&self) -> usize {
        (self.horizon / self.sampling - 1e-12).ceil().max(1.0) as usize
    }

    pub fn basis(&self) -> Result<BasisResponses> {
        let loads: Vec<_> = self.demands.iter().map(DemandRequest::load).collect();
        BasisResponses::build(&self.model, &loads, self.horizon, self.sampling)
    }

    /// Same problem with the demands replaced.
    pub fn with_demands(&self, demands: Vec<DemandRequest>) -> Result<Self> {
        Self::new(
            self.model.clone(),
            demands,
            self.horizon,
            self.sampling,
            self.u_lo.clone(),
            self.u_hi.clone(),
        )
    }

    pub fn with_model(&self, model: StateSpaceModel) -> Result<Self> {
        Self::new(
            model,
            self.demands.clone(),
            self.horizon,
            self.sampling,
            self.u_lo.clone(),
            self.u_hi.clone(),
        )
    }

    pub fn check_dimensions(&self, s: &Schedule) -> Result<()> {
        if s.tau.len() != self.demands.len() {
            return Err(dim(format!(
                "schedule has {} delays, problem has {} demands",
                s.tau.len(),
                self.demands.len()
            )));
        }
        if s.alpha.nrows() != self.model.inputs() || s.alpha.ncols() != self.slots() {
            return Err(dim(format!(
                "schedule alpha is {}x{}, expected {}x{}",
                s.alpha.nrows(),
                s.alpha.ncols(),
                self.model.inputs(),
                self.slots()
            )));
        }
        Ok(())
    }

    /// Whether every delay and every control deviation lies in its box.
    pub fn in_boxes(&self, s: &Schedule) -> bool {
        let tau_ok = self
            .demands
            .iter()
            .zip(s.tau.iter())
            .all(|(d, &t)| d.tau_lo <= t && t <= d.tau_hi);
        let alpha_ok = (0..s.alpha.nrows()).all(|j| {
            s.alpha
                .row(j)
                .iter()
                .all(|&a| self.u_lo[j] <= a && a <= self.u_hi[j])
        });
        tau_ok && alpha_ok
    }

    /// Schedule with every variable clamped into its box.
    pub fn project(&self, s: &Schedule) -> Schedule {
        let mut out = s.clone();
        for (i, d) in self.demands.iter().enumerate() {
            out.tau[i] = s.tau[i].clamp(d.tau_lo, d.tau_hi);
        }
        for j in 0..out.alpha.nrows() {
            for k in 0..out.alpha.ncols() {
                out.alpha[(j, k)] = s.alpha[(j, k)].clamp(self.u_lo[j], self.u_hi[j]);
            }
        }
        out
    }

    /// Total control input `u0 + alpha` on each sampling interval.
    pub fn control_signal(&self, s: &Schedule) -> Result<PiecewiseSignal> {
        let k = self.slots();
        let breaks = (0..=k).map(|j| j as f64 * self.sampling).collect();
        let values = (0..k)
            .map(|j| self.model.u0() + s.alpha.column(j))
            .collect();
        PiecewiseSignal::new(breaks, values)
    }
}

/// State at `t` assembled from the basis responses:
/// `x(t) = x_free(t) + sum alpha_{i,k} x_u_{i,k}(t) + sum x_v_i(t - tau_i)`.
pub fn state_at(basis: &BasisResponses, schedule: &Schedule, t: f64) -> Result<DVector<f64>> {
    if !(0.0..=basis.horizon()).contains(&t) {
        return Err(domain(format!(
            "t = {t} outside [0, {}]",
            basis.horizon()
        )));
    }
    if schedule.tau.len() != basis.demand_count()
        || schedule.alpha.nrows() != basis.model().inputs()
        || schedule.alpha.ncols() != basis.slots()
    {
        return Err(dim("schedule does not match the basis dimensions"));
    }
    let mut x = basis.free_response(t)?;
    for k in 0..basis.slots() {
        if basis.slot_start(k) > t {
            break;
        }
        for i in 0..basis.model().inputs() {
            let a = schedule.alpha[(i, k)];
            if a != 0.0 {
                x += basis.control_response(i, k, t)? * a;
            }
        }
    }
    for (i, &tau) in schedule.tau.iter().enumerate() {
        x += basis.demand_response(i, t - tau)?;
    }
    Ok(x)
}

/// `sum_i h_i(tau_i)` and its gradient `(h_i'(tau_i))_i`.
pub fn total_delay_cost(schedule: &Schedule, demands: &[DemandRequest]) -> (f64, DVector<f64>) {
    let mut grad = DVector::zeros(demands.len());
    let mut total = 0.0;
    for (i, (d, &tau)) in demands.iter().zip(schedule.tau.iter()).enumerate() {
        total += d.penalty.value(tau);
        grad[i] = d.penalty.slope(tau);
    }
    (total, grad)
}

/// Worst constraint excess of one row over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowViolation {
    pub row: usize,
    /// `max_t C_z x(t) - d_z`; negative when the row is strictly satisfied.
    pub max_excess: f64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub rows: Vec<RowViolation>,
    pub tolerance: f64,
    pub feasible: bool,
}

pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-9;

impl ViolationReport {
    /// Largest excess over all rows (negative if strictly feasible).
    pub fn max_excess(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.max_excess)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest excess clipped at zero.
    pub fn max_violation(&self) -> f64 {
        self.max_excess().max(0.0)
    }

    pub fn violated_rows(&self) -> impl Iterator<Item = &RowViolation> {
        self.rows.iter().filter(move |r| r.max_excess > self.tolerance)
    }
}

/// Per-row worst excess of `C x(t) - d` over the evaluator's grid.
pub fn max_violation(ev: &GridEvaluator, schedule: &Schedule, tolerance: f64) -> Result<ViolationReport> {
    let residuals = ev.residuals(schedule)?;
    Ok(ev.violation_report(&residuals, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::*;

    fn integrator_problem() -> ScheduleProblem {
        let model = StateSpaceModel::new(
            dmatrix![0.0],
            dmatrix![1.0],
            vec![dmatrix![1.0]],
            dmatrix![1.0],
            dvector![5.0],
            dvector![0.0],
            dvector![0.0],
        )
        .unwrap();
        let d = DemandRequest::new(
            PiecewiseSignal::pulse(0.0, 1.0, 1.0).unwrap(),
            0,
            0.0,
            3.0,
            PenaltySpec::Linear,
        )
        .unwrap();
        ScheduleProblem::new(model, vec![d], 4.0, 1.0, dvector![-1.0], dvector![1.0]).unwrap()
    }

    #[test]
    fn integrator_accumulates_pulse_mass() {
        let p = integrator_problem();
        let b = p.basis().unwrap();
        let mut s = Schedule::zeros(1, 1, p.slots());
        s.tau[0] = 0.5;
        assert!((state_at(&b, &s, 2.0).unwrap()[0] - 1.0).abs() < 1e-14);
        assert!((state_at(&b, &s, 1.0).unwrap()[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn no_load_influence_before_shifted_start() {
        let p = integrator_problem();
        let b = p.basis().unwrap();
        let mut s = Schedule::zeros(1, 1, p.slots());
        s.tau[0] = 3.0;
        for t in [0.0, 1.0, 2.9] {
            assert_eq!(state_at(&b, &s, t).unwrap(), b.free_response(t).unwrap());
        }
    }

    #[test]
    fn state_at_rejects_out_of_horizon() {
        let p = integrator_problem();
        let b = p.basis().unwrap();
        let s = Schedule::zeros(1, 1, p.slots());
        assert!(state_at(&b, &s, -0.1).is_err());
        assert!(state_at(&b, &s, 4.1).is_err());
    }

    #[test]
    fn delay_cost_examples() {
        let lin = |lo| {
            DemandRequest::new(PiecewiseSignal::pulse(0.0, 1.0, 1.0).unwrap(), 0, lo, 50.0, PenaltySpec::Linear)
                .unwrap()
        };
        let demands = vec![lin(0.0), lin(0.0), lin(0.0)];
        let s = Schedule::new(dvector![10.0, 20.0, 30.0], DMatrix::zeros(1, 1));
        assert_eq!(total_delay_cost(&s, &demands).0, 60.0);
        let z = Schedule::new(dvector![0.0, 0.0, 0.0], DMatrix::zeros(1, 1));
        assert_eq!(total_delay_cost(&z, &demands).0, 0.0);

        let mut w = demands[..2].to_vec();
        w[0].penalty = PenaltySpec::WeightedLinear { weight: 2.0 };
        w[1].penalty = PenaltySpec::WeightedLinear { weight: 1.0 };
        let s = Schedule::new(dvector![5.0, 5.0], DMatrix::zeros(1, 1));
        let (v, g) = total_delay_cost(&s, &w);
        assert_eq!(v, 15.0);
        assert_eq!(g, dvector![2.0, 1.0]);
    }

    #[test]
    fn demand_validation() {
        let sig = PiecewiseSignal::pulse(0.0, 1.0, 1.0).unwrap();
        assert!(DemandRequest::new(sig.clone(), 0, 5.0, 1.0, PenaltySpec::Linear).is_err());
        assert!(DemandRequest::new(sig.clone(), 0, -1.0, 1.0, PenaltySpec::Linear).is_err());
        assert!(DemandRequest::new(sig, 0, 0.0, 1.0, PenaltySpec::WeightedLinear { weight: 0.0 }).is_err());
    }

    #[test]
    fn penalty_json() {
        let p: PenaltySpec = serde_json::from_str(r#"{"kind":"quadratic","weight":2,"reference":1}"#).unwrap();
        assert_eq!(p, PenaltySpec::Quadratic { weight: 2.0, reference: 1.0 });
        assert!(serde_json::from_str::<PenaltySpec>(r#"{"kind":"linear","weight":2}"#).is_err());
    }

    proptest! {
        #[test]
        fn penalty_slope_matches_central_differences(tau in 0.0f64..300.0, w in 0.1f64..5.0, r in -50.0f64..50.0) {
            for p in [PenaltySpec::Linear, PenaltySpec::WeightedLinear { weight: w }, PenaltySpec::Quadratic { weight: w, reference: r }] {
                let h = 1e-4 * (1.0 + tau.abs());
                let fd = (p.value(tau + h) - p.value(tau - h)) / (2.0 * h);
                let scale = 1.0 + p.slope(tau).abs();
                prop_assert!((fd - p.slope(tau)).abs() <= 1e-8 * scale * (1.0 + tau.abs()));
            }
        }

        #[test]
        fn state_is_affine_in_alpha(a1 in -1.0f64..1.0, a2 in -1.0f64..1.0, b1 in -1.0f64..1.0, t in 0.0f64..4.0) {
            let model = StateSpaceModel::new(
                dmatrix![-0.5, 1.0; 0.0, 0.0], dmatrix![1.0; 0.3], vec![dmatrix![0.0; -1.0]],
                dmatrix![0.0, 1.0], dvector![5.0], dvector![0.2, 0.1], dvector![0.4],
            ).unwrap();
            let d = DemandRequest::new(PiecewiseSignal::pulse(0.5, 1.5, 2.0).unwrap(), 0, 0.0, 2.0, PenaltySpec::Linear).unwrap();
            let p = ScheduleProblem::new(model, vec![d], 4.0, 1.0, dvector![-1.0], dvector![1.0]).unwrap();
            let b = p.basis().unwrap();
            let mut base = Schedule::zeros(1, 1, 4);
            base.tau[0] = 0.7;
            let x0 = state_at(&b, &base, t).unwrap();
            let mut s1 = base.clone(); s1.alpha[(0, 0)] = a1; s1.alpha[(0, 2)] = b1;
            let mut s2 = base.clone(); s2.alpha[(0, 1)] = a2;
            let mut both = base.clone(); both.alpha[(0, 0)] = a1; both.alpha[(0, 2)] = b1; both.alpha[(0, 1)] = a2;
            let lhs = state_at(&b, &both, t).unwrap() - &x0;
            let rhs = (state_at(&b, &s1, t).unwrap() - &x0) + (state_at(&b, &s2, t).unwrap() - &x0);
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }
    }
}
