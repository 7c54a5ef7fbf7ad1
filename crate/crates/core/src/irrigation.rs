//! Serial irrigation channel: pools under local level control, with the
//! transport delay of each pool replaced by a first-order Padé fragment.
//!
//! State ordering per pool `i` (offset `4 i`): level `y_i`, Padé state of the
//! delayed inflow, controller integrator, controller lag. Inputs are the level
//! references, one per pool. Load channel `i` is the off-take of pool `i`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::lti::StateSpaceModel;

pub const STATES_PER_POOL: usize = 4;

/// Offsets of one pool's states inside the full state vector.
const LEVEL: usize = 0;
const PADE: usize = 1;
const INTEGRATOR: usize = 2;
const LAG: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolParams {
    pub c_in: f64,
    pub c_out: f64,
    pub t_d: f64,
    pub kappa: f64,
    pub phi: f64,
    pub rho: f64,
}

impl PoolParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("c_in", self.c_in),
            ("c_out", self.c_out),
            ("t_d", self.t_d),
            ("kappa", self.kappa),
            ("phi", self.phi),
            ("rho", self.rho),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(domain(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub pools: Vec<PoolParams>,
    pub u0: Vec<f64>,
    pub level_lo: Vec<f64>,
    pub level_hi: Vec<f64>,
}

impl NetworkSpec {
    /// The two-pool channel with the gate, delay and controller values used
    /// throughout the examples.
    pub fn two_pool() -> Self {
        Self {
            pools: vec![
                PoolParams {
                    c_in: 0.0546,
                    c_out: 0.0363,
                    t_d: 5.0,
                    kappa: 0.0103,
                    phi: 71.820,
                    rho: 8.510,
                },
                PoolParams {
                    c_in: 0.0173,
                    c_out: 0.0258,
                    t_d: 6.0,
                    kappa: 0.0084,
                    phi: 141.27,
                    rho: 16.74,
                },
            ],
            u0: vec![9.50, 9.55],
            level_lo: vec![9.4, 9.5],
            level_hi: vec![9.7, 9.7],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pools.len();
        if n == 0 {
            return Err(domain("network needs at least one pool"));
        }
        for (name, v) in [("u0", &self.u0), ("level_lo", &self.level_lo), ("level_hi", &self.level_hi)] {
            if v.len() != n {
                return Err(Error::Dimension(format!("{name} has length {}, expected {n}", v.len())));
            }
        }
        for (i, p) in self.pools.iter().enumerate() {
            p.validate().map_err(|e| domain(format!("pool {i}: {e}")))?;
            let (lo, u, hi) = (self.level_lo[i], self.u0[i], self.level_hi[i]);
            if !(lo < u && u < hi) {
                return Err(domain(format!(
                    "pool {i}: reference {u} must lie strictly inside the band [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// One-state realization of `(1 - s t_d / 2) / (1 + s t_d / 2)`:
/// `x' = -a x + input`, `output = 2 a x - input`, `a = 2 / t_d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PadeFragment {
    pub rate: f64,
}

impl PadeFragment {
    pub fn output_gain(&self) -> f64 {
        2.0 * self.rate
    }

    /// Frequency response at `s = j omega` as `(re, im)`.
    pub fn response(&self, omega: f64) -> (f64, f64) {
        // 2a / (a + j w) - 1
        let a = self.rate;
        let den = a * a + omega * omega;
        (2.0 * a * a / den - 1.0, -2.0 * a * omega / den)
    }
}

pub fn pade_delay_realization(t_d: f64) -> Result<PadeFragment> {
    if !(t_d > 0.0) || !t_d.is_finite() {
        return Err(domain(format!("transport delay must be positive, got {t_d}")));
    }
    Ok(PadeFragment { rate: 2.0 / t_d })
}

fn at(pool: usize, offset: usize) -> usize {
    STATES_PER_POOL * pool + offset
}

/// `(A, B, E per pool)`, with the controlled outflow of pool `i` written as
/// `q_i = kappa (phi / rho (z - l) + l)` for integrator `z` and lag `l`.
fn dynamics(spec: &NetworkSpec) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let n = spec.pools.len();
    let nx = STATES_PER_POOL * n;
    let mut a = DMatrix::zeros(nx, nx);
    let mut b = DMatrix::zeros(nx, n);
    // flow[i]: row vector giving q_i as a function of the state
    let flow: Vec<DVector<f64>> = spec
        .pools
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut row = DVector::zeros(nx);
            row[at(i, INTEGRATOR)] = p.kappa * p.phi / p.rho;
            row[at(i, LAG)] = p.kappa * (1.0 - p.phi / p.rho);
            row
        })
        .collect();
    for (i, p) in spec.pools.iter().enumerate() {
        let pade = pade_delay_realization(p.t_d)?;
        let (y, xp, z, l) = (at(i, LEVEL), at(i, PADE), at(i, INTEGRATOR), at(i, LAG));
        // Padé state driven by q_i
        a[(xp, xp)] -= pade.rate;
        for c in 0..nx {
            a[(xp, c)] += flow[i][c];
        }
        // level: c_in * delayed q_i - c_out * q_{i+1}
        a[(y, xp)] += p.c_in * pade.output_gain();
        for c in 0..nx {
            a[(y, c)] -= p.c_in * flow[i][c];
            if i + 1 < n {
                a[(y, c)] -= p.c_out * flow[i + 1][c];
            }
        }
        // controller: z' = u - y, rho l' = z - l
        a[(z, y)] -= 1.0;
        b[(z, i)] = 1.0;
        a[(l, z)] += 1.0 / p.rho;
        a[(l, l)] -= 1.0 / p.rho;
    }
    let loads = spec
        .pools
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut e = DMatrix::zeros(nx, 1);
            e[(at(i, LEVEL), 0)] = -p.c_out;
            e
        })
        .collect();
    Ok((a, b, loads))
}

/// Residual tolerance accepted for the equilibrium solve.
pub const STEADY_STATE_TOL: f64 = 1e-10;

/// Equilibrium under `u = u0` and no off-take.
pub fn steady_state(spec: &NetworkSpec) -> Result<DVector<f64>> {
    spec.validate()?;
    let (a, b, _) = dynamics(spec)?;
    let u0 = DVector::from_column_slice(&spec.u0);
    let rhs = -(&b * &u0);
    let x = a
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numeric("closed-loop dynamics admit no unique equilibrium".into()))?;
    let residual = (&a * &x + &b * &u0).amax();
    if residual > STEADY_STATE_TOL {
        return Err(Error::Numeric(format!("equilibrium residual {residual:e} too large")));
    }
    Ok(x)
}

/// Full constrained model of the channel; constraint rows per pool are
/// `y_i <= level_hi_i` then `-y_i <= -level_lo_i`.
pub fn build_network(spec: &NetworkSpec) -> Result<StateSpaceModel> {
    spec.validate()?;
    let n = spec.pools.len();
    let (a, b, loads) = dynamics(spec)?;
    let x0 = steady_state(spec)?;
    let mut c = DMatrix::zeros(2 * n, STATES_PER_POOL * n);
    let mut d = DVector::zeros(2 * n);
    for i in 0..n {
        c[(2 * i, at(i, LEVEL))] = 1.0;
        d[2 * i] = spec.level_hi[i];
        c[(2 * i + 1, at(i, LEVEL))] = -1.0;
        d[2 * i + 1] = -spec.level_lo[i];
    }
    StateSpaceModel::new(a, b, loads, c, d, x0, DVector::from_column_slice(&spec.u0))
}

/// Index of pool `i`'s level in the state vector.
pub fn level_index(pool: usize) -> usize {
    at(pool, LEVEL)
}
