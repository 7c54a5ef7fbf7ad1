use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Result};
use crate::lti::{BasisResponses, Phase, Propagator};
use crate::problem::{RowViolation, Schedule, ScheduleProblem, ViolationReport};

/// Uniform composite-trapezoid grid `0 = t_0 < ... < t_Q = T`.
///
/// The requested step is shrunk to `T / ceil(T / step)` so the nodes cover
/// the horizon exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureGrid {
    horizon: f64,
    step: f64,
    intervals: usize,
}

impl QuadratureGrid {
    pub fn new(horizon: f64, step: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(domain(format!("quadrature horizon must be positive, got {horizon}")));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(domain(format!("quadrature step must be positive, got {step}")));
        }
        let intervals = (horizon / step - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            horizon,
            step: horizon / intervals as f64,
            intervals,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn step(&self) -> f64 {
        self.step
    }
    pub fn nodes(&self) -> usize {
        self.intervals + 1
    }

    pub fn time(&self, q: usize) -> f64 {
        if q == self.intervals {
            self.horizon
        } else {
            q as f64 * self.step
        }
    }

    pub fn weight(&self, q: usize) -> f64 {
        if q == 0 || q == self.intervals {
            0.5 * self.step
        } else {
            self.step
        }
    }

    /// Composite trapezoid sum of node values.
    pub fn integrate(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        values
            .into_iter()
            .enumerate()
            .map(|(q, v)| self.weight(q) * v)
            .sum()
    }
}

/// Row-major `rows x cols` copy of a matrix for tight inner loops.
#[derive(Debug, Clone)]
struct Dense {
    cols: usize,
    data: Vec<f64>,
}

impl Dense {
    fn from(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter());
        }
        Self {
            cols: m.ncols(),
            data,
        }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += M x`
    fn add_mul(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), x);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Constraint-space samples of one control basis response on the grid.
#[derive(Debug, Clone)]
struct ControlColumn {
    /// First node at which the response can be non-zero.
    first: usize,
    /// `C x_u(t_q)` for nodes `first..`, row-major `(node, row)`.
    projected: Vec<f64>,
    /// `x_u(t_q)` for nodes `first..`, row-major `(node, state)`.
    states: Vec<f64>,
}

/// Node-wise constraint residuals `C x(t_q) - d` of one schedule.
#[derive(Debug, Clone)]
pub struct Residuals {
    rows: usize,
    values: Vec<f64>,
}

impl Residuals {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Residuals of node `q`, one per constraint row.
    pub fn node(&self, q: usize) -> &[f64] {
        &self.values[q * self.rows..(q + 1) * self.rows]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &v)| (i / self.rows, i % self.rows, v))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `C (A x_v(t_q - tau) + E v(t_q - tau))` for one demand, row-major
/// `(node, row)`.
#[derive(Debug, Clone)]
pub struct DemandRates {
    pub values: Vec<f64>,
}

/// A schedule problem bound to its basis responses and a quadrature grid.
///
/// Responses that do not depend on the decision variables (free response and
/// control pulses) are sampled once at construction; demand responses are
/// re-sampled at the shifted times on every evaluation.
#[derive(Debug, Clone)]
pub struct GridEvaluator {
    problem: ScheduleProblem,
    basis: BasisResponses,
    grid: QuadratureGrid,
    step_prop: Propagator,
    c: Dense,
    ca: Dense,
    base_residual: Vec<f64>,
    free_states: Vec<f64>,
    controls: Vec<ControlColumn>,
    /// `C f` for every forcing interval of every demand.
    demand_forcing: Vec<Vec<Vec<f64>>>,
}

impl GridEvaluator {
    pub fn new(problem: ScheduleProblem, grid_step: f64) -> Result<Self> {
        let basis = problem.basis()?;
        let grid = QuadratureGrid::new(problem.horizon(), grid_step)?;
        Self::with_basis(problem, basis, grid)
    }

    pub fn with_basis(problem: ScheduleProblem, basis: BasisResponses, grid: QuadratureGrid) -> Result<Self> {
        let model = problem.model();
        let a = model.a();
        let n = model.states();
        let p = model.constraints();
        let nodes = grid.nodes();
        let step_prop = Propagator::new(a, grid.step())?;
        let c = Dense::from(model.c());
        let ca = Dense::from(&(model.c() * a));

        let mut free_states = vec![0.0; nodes * n];
        let mut base_residual = vec![0.0; nodes * p];
        for q in 0..nodes {
            let x = basis.free_response(grid.time(q))?;
            free_states[q * n..(q + 1) * n].copy_from_slice(x.as_slice());
            let r = &mut base_residual[q * p..(q + 1) * p];
            for (z, rz) in r.iter_mut().enumerate() {
                *rz = dot(c.row(z), x.as_slice()) - model.d()[z];
            }
        }

        let mut controls = Vec::with_capacity(model.inputs() * basis.slots());
        for input in 0..model.inputs() {
            for slot in 0..basis.slots() {
                let start = basis.slot_start(slot);
                let first = (0..nodes).find(|&q| grid.time(q) >= start).unwrap_or(nodes);
                let count = nodes - first;
                let mut projected = vec![0.0; count * p];
                let mut states = vec![0.0; count * n];
                basis.control_pulse(input).march(
                    a,
                    &step_prop,
                    grid.time(first.min(nodes - 1)) - start,
                    grid.step(),
                    count,
                    |j, _, x| {
                        states[j * n..(j + 1) * n].copy_from_slice(x.as_slice());
                        c.add_mul(x.as_slice(), &mut projected[j * p..(j + 1) * p]);
                    },
                )?;
                controls.push(ControlColumn {
                    first,
                    projected,
                    states,
                });
            }
        }

        let demand_forcing = problem
            .demands()
            .iter()
            .map(|d| {
                let e = &model.load_maps()[d.channel];
                d.profile
                    .values()
                    .iter()
                    .map(|v| {
                        let f = e * v;
                        (0..p).map(|z| dot(c.row(z), f.as_slice())).collect()
                    })
                    .collect()
            })
            .collect();

        Ok(Self {
            problem,
            basis,
            grid,
            step_prop,
            c,
            ca,
            base_residual,
            free_states,
            controls,
            demand_forcing,
        })
    }

    pub fn problem(&self) -> &ScheduleProblem {
        &self.problem
    }
    pub fn basis(&self) -> &BasisResponses {
        &self.basis
    }
    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    fn slots(&self) -> usize {
        self.basis.slots()
    }

    fn add_controls(&self, schedule: &Schedule, out: &mut [f64]) {
        let p = self.problem.model().constraints();
        for input in 0..schedule.alpha.nrows() {
            for slot in 0..schedule.alpha.ncols() {
                let a = schedule.alpha[(input, slot)];
                if a == 0.0 {
                    continue;
                }
                let col = &self.controls[input * self.slots() + slot];
                let dst = &mut out[col.first * p..];
                for (o, v) in dst.iter_mut().zip(&col.projected) {
                    *o += a * v;
                }
            }
        }
    }

    /// Samples demand `i` shifted by `tau` and adds `C x_v` to `residual`;
    /// with `rates`, also stores `C (A x_v + E v)` per node.
    fn add_demand(
        &self,
        i: usize,
        tau: f64,
        residual: &mut [f64],
        mut rates: Option<&mut [f64]>,
    ) -> Result<()> {
        let p = self.problem.model().constraints();
        let forcing = &self.demand_forcing[i];
        self.basis.demand(i).march(
            self.problem.model().a(),
            &self.step_prop,
            -tau,
            self.grid.step(),
            self.grid.nodes(),
            |q, phase, x| {
                if phase == Phase::Before {
                    return;
                }
                let r = &mut residual[q * p..(q + 1) * p];
                self.c.add_mul(x.as_slice(), r);
                if let Some(rates) = rates.as_deref_mut() {
                    let dst = &mut rates[q * p..(q + 1) * p];
                    self.ca.add_mul(x.as_slice(), dst);
                    if let Phase::Interval(j) = phase {
                        for (d, f) in dst.iter_mut().zip(&forcing[j]) {
                            *d += f;
                        }
                    }
                }
            },
        )
    }

    /// `C x(t_q) - d` at every node.
    pub fn residuals(&self, schedule: &Schedule) -> Result<Residuals> {
        self.problem.check_dimensions(schedule)?;
        let mut values = self.base_residual.clone();
        self.add_controls(schedule, &mut values);
        for (i, &tau) in schedule.tau.iter().enumerate() {
            self.add_demand(i, tau, &mut values, None)?;
        }
        Ok(Residuals {
            rows: self.problem.model().constraints(),
            values,
        })
    }

    /// Residuals together with each demand's constraint-space rate.
    pub fn residuals_with_rates(&self, schedule: &Schedule) -> Result<(Residuals, Vec<DemandRates>)> {
        self.problem.check_dimensions(schedule)?;
        let p = self.problem.model().constraints();
        let mut values = self.base_residual.clone();
        self.add_controls(schedule, &mut values);
        let mut all_rates = Vec::with_capacity(schedule.tau.len());
        for (i, &tau) in schedule.tau.iter().enumerate() {
            let mut rates = vec![0.0; self.grid.nodes() * p];
            self.add_demand(i, tau, &mut values, Some(&mut rates))?;
            all_rates.push(DemandRates { values: rates });
        }
        Ok((Residuals { rows: p, values }, all_rates))
    }

    /// `sum_{q,z} weights[q, z] * C_z x_u(t_q)` for every control slot,
    /// as an `inputs x slots` matrix.
    pub fn control_sensitivities(&self, weights: &[f64]) -> DMatrix<f64> {
        let p = self.problem.model().constraints();
        let inputs = self.problem.model().inputs();
        let mut out = DMatrix::zeros(inputs, self.slots());
        for input in 0..inputs {
            for slot in 0..self.slots() {
                let col = &self.controls[input * self.slots() + slot];
                out[(input, slot)] = dot(&weights[col.first * p..], &col.projected);
            }
        }
        out
    }

    /// Full state at every node, assembled on the grid.
    pub fn states(&self, schedule: &Schedule) -> Result<Vec<DVector<f64>>> {
        self.problem.check_dimensions(schedule)?;
        let n = self.problem.model().states();
        let nodes = self.grid.nodes();
        let mut flat = self.free_states.clone();
        for input in 0..schedule.alpha.nrows() {
            for slot in 0..schedule.alpha.ncols() {
                let a = schedule.alpha[(input, slot)];
                if a == 0.0 {
                    continue;
                }
                let col = &self.controls[input * self.slots() + slot];
                for (o, v) in flat[col.first * n..].iter_mut().zip(&col.states) {
                    *o += a * v;
                }
            }
        }
        for (i, &tau) in schedule.tau.iter().enumerate() {
            self.basis.demand(i).march(
                self.problem.model().a(),
                &self.step_prop,
                -tau,
                self.grid.step(),
                nodes,
                |q, _, x| {
                    for (o, v) in flat[q * n..(q + 1) * n].iter_mut().zip(x.iter()) {
                        *o += v;
                    }
                },
            )?;
        }
        Ok(flat.chunks(n).map(DVector::from_column_slice).collect())
    }

    /// Per-row maximum of the residuals and where it occurs.
    pub fn violation_report(&self, residuals: &Residuals, tolerance: f64) -> ViolationReport {
        let p = residuals.rows();
        let mut rows: Vec<RowViolation> = (0..p)
            .map(|z| RowViolation {
                row: z,
                max_excess: f64::NEG_INFINITY,
                time: 0.0,
            })
            .collect();
        for (q, z, v) in residuals.iter() {
            if v > rows[z].max_excess {
                rows[z].max_excess = v;
                rows[z].time = self.grid.time(q);
            }
        }
        let feasible = rows.iter().all(|r| r.max_excess <= tolerance);
        ViolationReport {
            rows,
            tolerance,
            feasible,
        }
    }
}
