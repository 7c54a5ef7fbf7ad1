use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{dim, domain, Result};

/// A finitely supported, right-continuous piecewise-constant signal.
///
/// The signal holds `values[j]` on `[breakpoints[j], breakpoints[j + 1])` and
/// is zero before the first and from the last breakpoint on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSignal", into = "RawSignal")]
pub struct PiecewiseSignal {
    breakpoints: Vec<f64>,
    values: Vec<DVector<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSignal {
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl TryFrom<RawSignal> for PiecewiseSignal {
    type Error = crate::error::Error;

    fn try_from(raw: RawSignal) -> Result<Self> {
        PiecewiseSignal::new(
            raw.breakpoints,
            raw.values.into_iter().map(DVector::from_vec).collect(),
        )
    }
}

impl From<PiecewiseSignal> for RawSignal {
    fn from(s: PiecewiseSignal) -> Self {
        RawSignal {
            breakpoints: s.breakpoints,
            values: s.values.into_iter().map(|v| v.as_slice().to_vec()).collect(),
        }
    }
}

impl PiecewiseSignal {
    pub fn new(breakpoints: Vec<f64>, values: Vec<DVector<f64>>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(domain("a piecewise signal needs at least two breakpoints"));
        }
        if values.len() + 1 != breakpoints.len() {
            return Err(dim(format!(
                "{} breakpoints need {} interval values, got {}",
                breakpoints.len(),
                breakpoints.len() - 1,
                values.len()
            )));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) {
            return Err(domain("breakpoints must be finite"));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(domain("breakpoints must be strictly increasing"));
        }
        let channels = values[0].len();
        if channels == 0 {
            return Err(dim("signal values must have at least one channel"));
        }
        if values.iter().any(|v| v.len() != channels) {
            return Err(dim("all interval values must have the same dimension"));
        }
        if values.iter().flat_map(|v| v.iter()).any(|x| !x.is_finite()) {
            return Err(domain("signal values must be finite"));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    /// Scalar rectangular pulse of `amplitude` on `[start, end)`.
    pub fn pulse(start: f64, end: f64, amplitude: f64) -> Result<Self> {
        Self::new(vec![start, end], vec![DVector::from_element(1, amplitude)])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn channels(&self) -> usize {
        self.values[0].len()
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    /// Index of the interval containing `t`, or `None` outside the support.
    pub fn interval_at(&self, t: f64) -> Option<usize> {
        if t < self.start() || t >= self.end() {
            return None;
        }
        // Number of breakpoints <= t, minus one.
        Some(self.breakpoints.partition_point(|&b| b <= t) - 1)
    }

    pub fn value_at(&self, t: f64) -> DVector<f64> {
        match self.interval_at(t) {
            Some(j) => self.values[j].clone(),
            None => DVector::zeros(self.channels()),
        }
    }

    /// The same profile translated later in time by `delay`.
    pub fn shifted(&self, delay: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.iter().map(|b| b + delay).collect(),
            values: self.values.clone(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// Replaces every jump by a staircase ramp of `steps` equal sub-steps
    /// spread over `ramp` time units, centred on the original breakpoint.
    ///
    /// Interior intervals must be longer than `ramp`.
    pub fn with_ramped_edges(&self, ramp: f64, steps: usize) -> Result<Self> {
        if ramp <= 0.0 || steps < 2 {
            return Err(domain("ramp width must be positive with at least two steps"));
        }
        if self
            .breakpoints
            .windows(2)
            .any(|w| w[1] - w[0] <= ramp)
        {
            return Err(domain("every interval must be longer than the ramp width"));
        }
        let zero = DVector::zeros(self.channels());
        let level = |j: isize| -> &DVector<f64> {
            if j < 0 || j as usize >= self.values.len() {
                &zero
            } else {
                &self.values[j as usize]
            }
        };
        let h = ramp / steps as f64;
        let mut breaks = Vec::new();
        let mut vals = Vec::new();
        for (j, &b) in self.breakpoints.iter().enumerate() {
            let before = level(j as isize - 1);
            let after = level(j as isize);
            let first = b - 0.5 * ramp;
            for s in 0..steps {
                breaks.push(first + s as f64 * h);
                let frac = (s as f64 + 0.5) / steps as f64;
                vals.push(before + (after - before) * frac);
            }
            breaks.push(b + 0.5 * ramp);
            if j + 1 < self.breakpoints.len() {
                vals.push(after.clone());
            }
        }
        Self::new(breaks, vals)
    }
}
