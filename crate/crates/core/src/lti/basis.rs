use nalgebra::{DMatrix, DVector};

use super::model::StateSpaceModel;
use super::propagate::{Propagator, PropagatorCache};
use super::signal::PiecewiseSignal;
use crate::error::{dim, domain, Result};

/// Which forcing is active at a sampled time of a [`ForcedResponse`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Before the first breakpoint: state and forcing are zero.
    Before,
    /// Inside interval `j` of the forcing.
    Interval(usize),
    /// At or after the last breakpoint.
    Tail,
}

/// Response of `x' = A x + f(s)` to a piecewise-constant forcing that starts
/// at `breaks[0]` from `initial`, is `forcings[j]` on
/// `[breaks[j], breaks[j + 1])` and `tail` afterwards.
///
/// The response is zero before `breaks[0]`.
#[derive(Debug, Clone)]
pub struct ForcedResponse {
    breaks: Vec<f64>,
    forcings: Vec<DVector<f64>>,
    tail: Option<DVector<f64>>,
    node_states: Vec<DVector<f64>>,
}

impl ForcedResponse {
    pub fn new(
        a: &DMatrix<f64>,
        cache: &mut PropagatorCache,
        initial: DVector<f64>,
        breaks: Vec<f64>,
        forcings: Vec<DVector<f64>>,
        tail: Option<DVector<f64>>,
    ) -> Result<Self> {
        if breaks.is_empty() || forcings.len() + 1 != breaks.len() {
            return Err(dim("forced response needs one forcing per interval"));
        }
        let mut node_states = Vec::with_capacity(breaks.len());
        node_states.push(initial);
        for (j, f) in forcings.iter().enumerate() {
            let h = breaks[j + 1] - breaks[j];
            let p = cache.get_or_insert(a, h)?;
            let next = p.apply(&node_states[j], f);
            node_states.push(next);
        }
        Ok(Self {
            breaks,
            forcings,
            tail,
            node_states,
        })
    }

    pub fn phase(&self, s: f64) -> Phase {
        if s < self.breaks[0] {
            Phase::Before
        } else if s >= *self.breaks.last().unwrap() {
            Phase::Tail
        } else {
            Phase::Interval(self.breaks.partition_point(|&b| b <= s) - 1)
        }
    }

    pub fn forcing(&self, phase: Phase) -> Option<&DVector<f64>> {
        match phase {
            Phase::Before => None,
            Phase::Interval(j) => Some(&self.forcings[j]),
            Phase::Tail => self.tail.as_ref(),
        }
    }

    fn anchor(&self, phase: Phase) -> (f64, &DVector<f64>) {
        match phase {
            Phase::Interval(j) => (self.breaks[j], &self.node_states[j]),
            Phase::Tail => (*self.breaks.last().unwrap(), self.node_states.last().unwrap()),
            Phase::Before => unreachable!("no anchor before the response starts"),
        }
    }

    /// Exact state at `s`.
    pub fn eval(&self, a: &DMatrix<f64>, s: f64) -> Result<DVector<f64>> {
        let phase = self.phase(s);
        if phase == Phase::Before {
            return Ok(DVector::zeros(a.nrows()));
        }
        let (t0, x0) = self.anchor(phase);
        let p = Propagator::new(a, s - t0)?;
        let mut out = DVector::zeros(a.nrows());
        p.apply_into(x0, self.forcing(phase), &mut out);
        Ok(out)
    }

    /// Time derivative `A x(s) + f(s)` with the right-continuous forcing.
    pub fn rate(&self, a: &DMatrix<f64>, s: f64) -> Result<DVector<f64>> {
        let x = self.eval(a, s)?;
        let mut r = a * x;
        if let Some(f) = self.forcing(self.phase(s)) {
            r += f;
        }
        Ok(r)
    }

    /// Visits the states at `first + q * step` for `q in 0..count`.
    ///
    /// `step_prop` must be the propagator for exactly `step`. Consecutive
    /// samples inside one interval are advanced by `step_prop`; the first
    /// sample of every interval is computed directly from the interval's
    /// anchor state.
    pub fn march<F>(
        &self,
        a: &DMatrix<f64>,
        step_prop: &Propagator,
        first: f64,
        step: f64,
        count: usize,
        mut visit: F,
    ) -> Result<()>
    where
        F: FnMut(usize, Phase, &DVector<f64>),
    {
        let n = a.nrows();
        let zero = DVector::zeros(n);
        let mut cur = DVector::zeros(n);
        let mut next = DVector::zeros(n);
        let mut prev_phase = Phase::Before;
        for q in 0..count {
            let s = first + q as f64 * step;
            let phase = self.phase(s);
            match phase {
                Phase::Before => {
                    visit(q, phase, &zero);
                    prev_phase = phase;
                    continue;
                }
                _ if q > 0 && phase == prev_phase => {
                    step_prop.apply_into(&cur, self.forcing(phase), &mut next);
                    std::mem::swap(&mut cur, &mut next);
                }
                _ => {
                    let (t0, x0) = self.anchor(phase);
                    let p = Propagator::new(a, s - t0)?;
                    p.apply_into(x0, self.forcing(phase), &mut cur);
                }
            }
            visit(q, phase, &cur);
            prev_phase = phase;
        }
        Ok(())
    }
}

/// A demand profile bound to the load channel it enters through.
#[derive(Debug, Clone)]
pub struct LoadProfile {
    pub channel: usize,
    pub signal: PiecewiseSignal,
}

/// The free response, the unit ZOH pulse responses and the unshifted demand
/// responses of a model, evaluable exactly at arbitrary times.
///
/// Control slots are 0-based: slot `k` holds input `i` at one unit on
/// `[k * sampling, (k + 1) * sampling)`, for `k in 0..slots()` with
/// `slots() = ceil(horizon / sampling)`.
#[derive(Debug, Clone)]
pub struct BasisResponses {
    model: StateSpaceModel,
    horizon: f64,
    sampling: f64,
    slots: usize,
    free: ForcedResponse,
    control_pulses: Vec<ForcedResponse>,
    demands: Vec<ForcedResponse>,
    loads: Vec<LoadProfile>,
    cache: PropagatorCache,
}

impl BasisResponses {
    pub fn build(
        model: &StateSpaceModel,
        loads: &[LoadProfile],
        horizon: f64,
        sampling: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(domain(format!("horizon must be positive, got {horizon}")));
        }
        if !(sampling > 0.0) || sampling > horizon {
            return Err(domain(format!(
                "sampling time must lie in (0, horizon], got {sampling}"
            )));
        }
        let n = model.states();
        let a = model.a();
        let mut cache = PropagatorCache::default();

        let free = ForcedResponse::new(
            a,
            &mut cache,
            model.x0().clone(),
            vec![0.0],
            vec![],
            Some(model.b() * model.u0()),
        )?;

        let control_pulses = (0..model.inputs())
            .map(|i| {
                ForcedResponse::new(
                    a,
                    &mut cache,
                    DVector::zeros(n),
                    vec![0.0, sampling],
                    vec![model.b().column(i).into_owned()],
                    None,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let mut demands = Vec::with_capacity(loads.len());
        for (i, load) in loads.iter().enumerate() {
            let e = model.load_map(load.channel).ok_or_else(|| {
                dim(format!(
                    "demand {i} targets load channel {} but the model has {}",
                    load.channel,
                    model.load_maps().len()
                ))
            })?;
            if e.ncols() != load.signal.channels() {
                return Err(dim(format!(
                    "demand {i} has {} components but load channel {} takes {}",
                    load.signal.channels(),
                    load.channel,
                    e.ncols()
                )));
            }
            if load.signal.start() < 0.0 {
                return Err(domain(format!(
                    "demand {i} starts at {} < 0; profiles must start inside the horizon",
                    load.signal.start()
                )));
            }
            let forcings = load.signal.values().iter().map(|v| e * v).collect();
            demands.push(ForcedResponse::new(
                a,
                &mut cache,
                DVector::zeros(n),
                load.signal.breakpoints().to_vec(),
                forcings,
                None,
            )?);
        }

        Ok(Self {
            model: model.clone(),
            horizon,
            sampling,
            slots: (horizon / sampling - 1e-12).ceil().max(1.0) as usize,
            free,
            control_pulses,
            demands,
            loads: loads.to_vec(),
            cache,
        })
    }

    pub fn model(&self) -> &StateSpaceModel {
        &self.model
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn sampling(&self) -> f64 {
        self.sampling
    }
    pub fn slots(&self) -> usize {
        self.slots
    }
    pub fn loads(&self) -> &[LoadProfile] {
        &self.loads
    }
    pub fn demand_count(&self) -> usize {
        self.demands.len()
    }
    pub fn cached_segment_lengths(&self) -> usize {
        self.cache.len()
    }

    pub fn slot_start(&self, slot: usize) -> f64 {
        slot as f64 * self.sampling
    }

    pub(crate) fn control_pulse(&self, input: usize) -> &ForcedResponse {
        &self.control_pulses[input]
    }
    pub(crate) fn demand(&self, i: usize) -> &ForcedResponse {
        &self.demands[i]
    }

    /// Free plus nominal-input response `e^{At} x0 + int_0^t e^{A(t-b)} B u0 db`.
    pub fn free_response(&self, t: f64) -> Result<DVector<f64>> {
        self.free.eval(self.model.a(), t)
    }

    /// Response to a unit pulse on input `input` during control slot `slot`.
    pub fn control_response(&self, input: usize, slot: usize, t: f64) -> Result<DVector<f64>> {
        if input >= self.model.inputs() || slot >= self.slots {
            return Err(dim(format!("control basis ({input}, {slot}) out of range")));
        }
        self.control_pulses[input].eval(self.model.a(), t - self.slot_start(slot))
    }

    /// Response to the unshifted demand `i`; zero for `s` before it starts.
    pub fn demand_response(&self, i: usize, s: f64) -> Result<DVector<f64>> {
        self.demand_checked(i)?.eval(self.model.a(), s)
    }

    /// `A x_v(s) + E v(s)`, the time derivative of the demand response.
    pub fn demand_rate(&self, i: usize, s: f64) -> Result<DVector<f64>> {
        self.demand_checked(i)?.rate(self.model.a(), s)
    }

    fn demand_checked(&self, i: usize) -> Result<&ForcedResponse> {
        self.demands
            .get(i)
            .ok_or_else(|| dim(format!("demand index {i} out of range")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn scalar_model(a: f64, x0: f64, u0: f64) -> StateSpaceModel {
        StateSpaceModel::new(
            dmatrix![a],
            dmatrix![1.0],
            vec![dmatrix![1.0]],
            dmatrix![1.0],
            dvector![10.0],
            dvector![x0],
            dvector![u0],
        )
        .unwrap()
    }

    fn unit_pulse() -> Vec<LoadProfile> {
        vec![LoadProfile {
            channel: 0,
            signal: PiecewiseSignal::pulse(0.0, 1.0, 1.0).unwrap(),
        }]
    }

    #[test]
    fn zero_free_response() {
        let b = BasisResponses::build(&scalar_model(-0.3, 0.0, 0.0), &unit_pulse(), 5.0, 1.0)
            .unwrap();
        for t in [0.0, 0.5, 2.0, 5.0] {
            assert_eq!(b.free_response(t).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn two_segment_decay() {
        let b = BasisResponses::build(&scalar_model(-1.0, 0.0, 0.0), &unit_pulse(), 5.0, 1.0)
            .unwrap();
        let want = (1.0 - (-1f64).exp()) * (-1f64).exp();
        assert!((b.demand_response(0, 2.0).unwrap()[0] - want).abs() < 1e-14);
        assert!((want - 0.232544).abs() < 1e-6);
        assert_eq!(b.demand_response(0, -0.5).unwrap()[0], 0.0);
    }

    #[test]
    fn control_pulse_causality() {
        let b = BasisResponses::build(&scalar_model(-0.5, 1.0, 0.2), &unit_pulse(), 10.0, 2.0)
            .unwrap();
        assert_eq!(b.slots(), 5);
        for slot in 0..5 {
            let start = b.slot_start(slot);
            assert_eq!(b.control_response(0, slot, start - 1e-9).unwrap()[0], 0.0);
            assert!(b.control_response(0, slot, start + 0.5).unwrap()[0] > 0.0);
        }
        assert!(b.control_response(0, 5, 1.0).is_err());
    }

    #[test]
    fn slot_count_rounds_up() {
        let b = BasisResponses::build(&scalar_model(-0.5, 0.0, 0.0), &unit_pulse(), 10.5, 2.0)
            .unwrap();
        assert_eq!(b.slots(), 6);
    }

    #[test]
    fn free_response_includes_nominal_input() {
        // x' = -x + 1, x(0) = 0  =>  x(t) = 1 - e^{-t}
        let b = BasisResponses::build(&scalar_model(-1.0, 0.0, 1.0), &unit_pulse(), 5.0, 1.0)
            .unwrap();
        let t: f64 = 1.7;
        assert!((b.free_response(t).unwrap()[0] - (1.0 - (-t).exp())).abs() < 1e-14);
    }

    #[test]
    fn linearity_in_demand_amplitude() {
        let model = StateSpaceModel::new(
            dmatrix![-0.4, 0.2; 0.0, 0.0],
            dmatrix![1.0; 0.0],
            vec![dmatrix![0.5; -1.0]],
            dmatrix![1.0, 0.0],
            dvector![1.0],
            dvector![0.0, 0.0],
            dvector![0.0],
        )
        .unwrap();
        let sig = PiecewiseSignal::new(
            vec![0.5, 1.0, 2.5],
            vec![dvector![1.0], dvector![-0.3]],
        )
        .unwrap();
        let c = 3.7;
        let one = BasisResponses::build(
            &model,
            &[LoadProfile { channel: 0, signal: sig.clone() }],
            6.0,
            1.0,
        )
        .unwrap();
        let scaled = BasisResponses::build(
            &model,
            &[LoadProfile { channel: 0, signal: sig.scaled(c) }],
            6.0,
            1.0,
        )
        .unwrap();
        for s in [0.2, 0.7, 1.3, 2.9, 5.5] {
            let x = one.demand_response(0, s).unwrap() * c;
            let y = scaled.demand_response(0, s).unwrap();
            assert!((x - y).amax() < 1e-13);
        }
        assert_eq!(one.demand_response(0, 0.49).unwrap().amax(), 0.0);
    }

    #[test]
    fn march_agrees_with_direct_evaluation() {
        let model = StateSpaceModel::new(
            dmatrix![-0.4, 0.2; -0.1, 0.0],
            dmatrix![1.0; 0.0],
            vec![dmatrix![0.5; -1.0]],
            dmatrix![1.0, 0.0],
            dvector![1.0],
            dvector![0.3, 0.0],
            dvector![0.1],
        )
        .unwrap();
        let sig = PiecewiseSignal::new(
            vec![0.55, 1.0, 2.45],
            vec![dvector![1.0], dvector![-0.3]],
        )
        .unwrap();
        let b = BasisResponses::build(&model, &[LoadProfile { channel: 0, signal: sig }], 6.0, 1.0)
            .unwrap();
        let step = 0.1;
        let prop = Propagator::new(model.a(), step).unwrap();
        let first = -0.37;
        let mut worst: f64 = 0.0;
        b.demand(0)
            .march(model.a(), &prop, first, step, 64, |q, _, x| {
                let s = first + q as f64 * step;
                let d = b.demand_response(0, s).unwrap();
                worst = worst.max((x - d).amax());
            })
            .unwrap();
        assert!(worst < 1e-13, "{worst}");
    }

    #[test]
    fn rejects_bad_grid() {
        let m = scalar_model(-1.0, 0.0, 0.0);
        assert!(BasisResponses::build(&m, &unit_pulse(), 0.0, 1.0).is_err());
        assert!(BasisResponses::build(&m, &unit_pulse(), 5.0, 0.0).is_err());
        assert!(BasisResponses::build(&m, &unit_pulse(), 5.0, 6.0).is_err());
        let bad = vec![LoadProfile { channel: 3, signal: PiecewiseSignal::pulse(0.0, 1.0, 1.0).unwrap() }];
        assert!(BasisResponses::build(&m, &bad, 5.0, 1.0).is_err());
    }

    #[test]
    fn shared_between_threads() {
        fn assert_sync<T: Send + Sync>() {}
        assert_sync::<BasisResponses>();
        let b = std::sync::Arc::new(
            BasisResponses::build(&scalar_model(-1.0, 0.0, 0.0), &unit_pulse(), 5.0, 1.0).unwrap(),
        );
        let handles: Vec<_> = (0..4)
            .map(|k| {
                let b = b.clone();
                std::thread::spawn(move || b.demand_response(0, 1.0 + k as f64).unwrap()[0])
            })
            .collect();
        let vals: Vec<f64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[0] > w[1]));
    }
}
