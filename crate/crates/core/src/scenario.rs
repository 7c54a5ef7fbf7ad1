//! Scenario files: a strict JSON description of one scheduling problem, the
//! solver settings and the initializer.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "system": { "kind": "two_pool", "pools": [...], "u0": [...], "level_lo": [...], "level_hi": [...] },
//!   "horizon": 1000, "sampling": 50, "quadrature_dt": 0.25,
//!   "demands": [ { "profile": { "breakpoints": [40, 100], "values": [[0.1]] },
//!                  "channel": 0, "tau_lo": 0, "tau_hi": 300, "penalty": { "kind": "linear" } } ],
//!   "u_lo": [-0.05, -0.05], "u_hi": [0.05, 0.05],
//!   "solver": { "mode": "barrier", "epsilon0": 0.1 },
//!   "init": { "kind": "separated" }
//! }
//! ```
//!
//! Unknown fields are rejected everywhere. Errors name the offending field.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irrigation::{build_network, level_index, NetworkSpec, PoolParams};
use crate::lti::{PiecewiseSignal, StateSpaceModel};
use crate::objectives::GridEvaluator;
use crate::problem::{DemandRequest, PenaltySpec, ScheduleProblem};
use crate::solver::{InitSpec, SolverConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// The two-pool channel scenario shipped with the crate.
pub const BUNDLED_TWO_POOL: &str = include_str!("../scenarios/two_pool_paper.scenario");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub system: SystemSpec,
    pub horizon: f64,
    pub sampling: f64,
    pub quadrature_dt: f64,
    pub demands: Vec<DemandSpec>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<Smoothing>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub init: InitSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// Pools in series under local level control; see [`crate::irrigation`].
    TwoPool {
        pools: Vec<PoolParams>,
        u0: Vec<f64>,
        level_lo: Vec<f64>,
        level_hi: Vec<f64>,
    },
    /// Matrices given row by row; `e` holds one load matrix per channel.
    Explicit {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        e: Vec<Vec<Vec<f64>>>,
        c: Vec<Vec<f64>>,
        d: Vec<f64>,
        x0: Vec<f64>,
        u0: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    pub profile: PiecewiseSignal,
    #[serde(alias = "pool")]
    pub channel: usize,
    pub tau_lo: f64,
    pub tau_hi: f64,
    #[serde(default)]
    pub penalty: PenaltySpec,
}

/// Replace every profile edge by a staircase ramp of `steps` levels spread
/// over `ramp` minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Smoothing {
    pub ramp: f64,
    pub steps: usize,
}

/// Named state samples written as trajectory columns.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputMap {
    pub names: Vec<String>,
    pub states: Vec<usize>,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub problem: ScheduleProblem,
    pub outputs: OutputMap,
}

fn at(path: impl Into<String>, e: impl std::fmt::Display) -> Error {
    Error::Scenario {
        path: path.into(),
        message: e.to_string(),
    }
}

fn matrix(path: &str, rows: &[Vec<f64>], expect_rows: Option<usize>) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(at(format!("{path}[{i}]"), format!("row has {} entries, expected {cols}", rows[i].len())));
    }
    if let Some(n) = expect_rows {
        if rows.len() != n {
            return Err(at(path, format!("has {} rows, expected {n}", rows.len())));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl SystemSpec {
    pub fn build(&self) -> Result<(StateSpaceModel, OutputMap)> {
        match self {
            SystemSpec::TwoPool {
                pools,
                u0,
                level_lo,
                level_hi,
            } => {
                let spec = NetworkSpec {
                    pools: pools.clone(),
                    u0: u0.clone(),
                    level_lo: level_lo.clone(),
                    level_hi: level_hi.clone(),
                };
                let model = build_network(&spec).map_err(|e| at("system", e))?;
                let outputs = OutputMap {
                    names: (1..=pools.len()).map(|i| format!("y{i}")).collect(),
                    states: (0..pools.len()).map(level_index).collect(),
                };
                Ok((model, outputs))
            }
            SystemSpec::Explicit {
                a,
                b,
                e,
                c,
                d,
                x0,
                u0,
            } => {
                let n = a.len();
                let am = matrix("system.a", a, None)?;
                let bm = matrix("system.b", b, Some(n))?;
                let em = e
                    .iter()
                    .enumerate()
                    .map(|(i, ei)| matrix(&format!("system.e[{i}]"), ei, Some(n)))
                    .collect::<Result<Vec<_>>>()?;
                let cm = matrix("system.c", c, None)?;
                let model = StateSpaceModel::new(
                    am,
                    bm,
                    em,
                    cm,
                    DVector::from_column_slice(d),
                    DVector::from_column_slice(x0),
                    DVector::from_column_slice(u0),
                )
                .map_err(|e| at("system", e))?;
                let outputs = OutputMap {
                    names: (1..=n).map(|i| format!("x{i}")).collect(),
                    states: (0..n).collect(),
                };
                Ok((model, outputs))
            }
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            at(if path == "." { String::new() } else { path }, e.into_inner())
        })?;
        Ok(file)
    }

    pub fn validate(self) -> Result<Scenario> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(at(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let (model, outputs) = self.system.build()?;
        let positive = [
            ("horizon", self.horizon),
            ("sampling", self.sampling),
            ("quadrature_dt", self.quadrature_dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(at(name, format!("must be positive, got {v}")));
            }
        }
        if self.sampling > self.horizon {
            return Err(at("sampling", "must not exceed the horizon"));
        }
        if self.quadrature_dt > self.horizon {
            return Err(at("quadrature_dt", "must not exceed the horizon"));
        }
        if self.demands.is_empty() {
            return Err(at("demands", "at least one demand is required"));
        }
        let mut demands = Vec::with_capacity(self.demands.len());
        for (i, d) in self.demands.iter().enumerate() {
            let path = format!("demands[{i}]");
            let Some(e) = model.load_map(d.channel) else {
                return Err(at(
                    format!("{path}.channel"),
                    format!("channel {} does not exist ({} available)", d.channel, model.load_maps().len()),
                ));
            };
            if d.profile.channels() != e.ncols() {
                return Err(at(
                    format!("{path}.profile"),
                    format!("profile has {} channels, load map has {}", d.profile.channels(), e.ncols()),
                ));
            }
            if d.profile.start() < 0.0 {
                return Err(at(format!("{path}.profile"), "profile must start at t >= 0"));
            }
            let profile = match self.smoothing {
                Some(s) => d
                    .profile
                    .with_ramped_edges(s.ramp, s.steps)
                    .map_err(|e| at("smoothing", e))?,
                None => d.profile.clone(),
            };
            let request = DemandRequest::new(profile, d.channel, d.tau_lo, d.tau_hi, d.penalty)
                .map_err(|e| at(path.clone(), e))?;
            demands.push(request);
        }
        let inputs = model.inputs();
        for (name, v) in [("u_lo", &self.u_lo), ("u_hi", &self.u_hi)] {
            if v.len() != inputs {
                return Err(at(name, format!("has length {}, expected {inputs}", v.len())));
            }
        }
        let problem = ScheduleProblem::new(
            model,
            demands,
            self.horizon,
            self.sampling,
            DVector::from_column_slice(&self.u_lo),
            DVector::from_column_slice(&self.u_hi),
        )
        .map_err(|e| at("", e))?;
        self.solver.validate().map_err(|e| at("solver", e))?;
        if let InitSpec::Explicit { tau, alpha } = &self.init {
            let shape_ok = tau.len() == problem.demands().len()
                && alpha.len() == inputs
                && alpha.iter().all(|r| r.len() == problem.slots());
            if !shape_ok {
                return Err(at(
                    "init",
                    format!(
                        "explicit schedule needs {} delays and {inputs} x {} deviations",
                        problem.demands().len(),
                        problem.slots()
                    ),
                ));
            }
        }
        Ok(Scenario {
            file: self,
            problem,
            outputs,
        })
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        ScenarioFile::parse(text)?.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn bundled_two_pool() -> Self {
        Self::parse(BUNDLED_TWO_POOL).expect("bundled scenario is valid")
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.file.solver
    }

    pub fn init(&self) -> &InitSpec {
        &self.file.init
    }

    pub fn quadrature_dt(&self) -> f64 {
        self.file.quadrature_dt
    }

    /// Same scenario with every demand edge ramped.
    pub fn smoothed(&self, smoothing: Smoothing) -> Result<Self> {
        let mut file = self.file.clone();
        file.smoothing = Some(smoothing);
        file.validate()
    }

    pub fn evaluator(&self, quadrature_dt: Option<f64>) -> Result<GridEvaluator> {
        GridEvaluator::new(self.problem.clone(), quadrature_dt.unwrap_or(self.file.quadrature_dt))
    }
}
