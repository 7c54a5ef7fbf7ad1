use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::objectives::GridEvaluator;
use crate::problem::Schedule;

/// Produces the starting schedule of a solve.
pub trait Initializer: Send + Sync {
    fn name(&self) -> &'static str;

    fn initial(&self, ev: &GridEvaluator) -> Result<Schedule>;
}

/// All delays and deviations zero, clamped into the boxes.
#[derive(Debug, Clone, Copy, Default)]
pub struct Zeros;

impl Initializer for Zeros {
    fn name(&self) -> &'static str {
        "zeros"
    }

    fn initial(&self, ev: &GridEvaluator) -> Result<Schedule> {
        let p = ev.problem();
        Ok(p.project(&Schedule::zeros(p.demands().len(), p.model().inputs(), p.slots())))
    }
}

/// Demands laid out one after another; see [`feasible_init`].
#[derive(Debug, Clone, Default)]
pub struct Separated {
    pub order: Option<Vec<usize>>,
}

impl Initializer for Separated {
    fn name(&self) -> &'static str {
        "separated"
    }

    fn initial(&self, ev: &GridEvaluator) -> Result<Schedule> {
        feasible_init(ev, self.order.as_deref())
    }
}

/// A given schedule, which must fit the problem and its boxes.
#[derive(Debug, Clone)]
pub struct Explicit(pub Schedule);

impl Initializer for Explicit {
    fn name(&self) -> &'static str {
        "explicit"
    }

    fn initial(&self, ev: &GridEvaluator) -> Result<Schedule> {
        let p = ev.problem();
        p.check_dimensions(&self.0)?;
        if !p.in_boxes(&self.0) {
            return Err(domain("explicit initial schedule lies outside the decision boxes"));
        }
        Ok(self.0.clone())
    }
}

/// Initializer choice as written in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Zeros {},
    Separated {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        order: Option<Vec<usize>>,
    },
    Explicit {
        tau: Vec<f64>,
        alpha: Vec<Vec<f64>>,
    },
}

impl Default for InitSpec {
    fn default() -> Self {
        InitSpec::Separated { order: None }
    }
}

impl InitSpec {
    pub fn initializer(&self) -> Result<Box<dyn Initializer>> {
        Ok(match self {
            InitSpec::Zeros {} => Box::new(Zeros),
            InitSpec::Separated { order } => Box::new(Separated { order: order.clone() }),
            InitSpec::Explicit { tau, alpha } => {
                let slots = alpha.first().map_or(0, Vec::len);
                if alpha.iter().any(|r| r.len() != slots) {
                    return Err(Error::Dimension("alpha rows must all have the same length".into()));
                }
                let a = DMatrix::from_fn(alpha.len(), slots, |i, k| alpha[i][k]);
                Box::new(Explicit(Schedule::new(DVector::from_column_slice(tau), a)))
            }
        })
    }
}

type Constructor = fn() -> Box<dyn Initializer>;

/// Parameterless initializers by name.
#[derive(Clone)]
pub struct InitializerRegistry {
    entries: BTreeMap<&'static str, Constructor>,
}

impl Default for InitializerRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register("zeros", || Box::new(Zeros));
        r.register("separated", || Box::new(Separated::default()));
        r
    }
}

impl InitializerRegistry {
    pub fn register(&mut self, name: &'static str, ctor: Constructor) {
        self.entries.insert(name, ctor);
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn Initializer>> {
        self.entries.get(name).map(|c| c()).ok_or_else(|| Error::Unknown {
            kind: "initializer",
            name: name.to_string(),
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

fn strictly_feasible(ev: &GridEvaluator, s: &Schedule) -> Result<bool> {
    Ok(ev.residuals(s)?.max() < 0.0)
}

/// Strictly feasible start with zero control deviations.
///
/// Tries every delay at its lower bound first. Otherwise demands are placed
/// greedily in `order` (index order by default) so that each shifted support
/// starts at least `gap` after the previous one ends, the first one at least
/// `gap` after `t = 0`, with `gap` growing from zero in steps of the shortest
/// demand duration.
pub fn feasible_init(ev: &GridEvaluator, order: Option<&[usize]>) -> Result<Schedule> {
    let p = ev.problem();
    let demands = p.demands();
    let m = demands.len();
    let order: Vec<usize> = match order {
        Some(o) => {
            let mut seen = vec![false; m];
            for &i in o {
                if i >= m || std::mem::replace(&mut seen[i], true) {
                    return Err(domain(format!("separation order must be a permutation of 0..{m}")));
                }
            }
            if o.len() != m {
                return Err(domain(format!("separation order must be a permutation of 0..{m}")));
            }
            o.to_vec()
        }
        None => (0..m).collect(),
    };
    let mut s = Schedule::zeros(m, p.model().inputs(), p.slots());
    for (i, d) in demands.iter().enumerate() {
        s.tau[i] = d.tau_lo;
    }
    if strictly_feasible(ev, &s)? {
        return Ok(s);
    }
    let shortest = demands
        .iter()
        .map(|d| d.profile.duration())
        .fold(f64::INFINITY, f64::min);
    let mut gap = 0.0;
    loop {
        let mut cursor = 0.0;
        for &i in &order {
            let d = &demands[i];
            let tau = d.tau_lo.max(cursor + gap - d.profile.start());
            if tau > d.tau_hi {
                return Err(Error::NoFeasibleSeparation);
            }
            s.tau[i] = tau;
            cursor = d.profile.end() + tau;
        }
        if strictly_feasible(ev, &s)? {
            return Ok(s);
        }
        gap += shortest;
    }
}
