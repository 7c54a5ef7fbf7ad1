use std::collections::BTreeMap;
use std::sync::Arc;

use super::{solve_continuation, Iterate, Mode, SolveReport, SolverConfig};
use crate::error::{Error, Result};
use crate::objectives::{ExpPenalty, GridEvaluator, LogBarrier, Objective};
use crate::problem::Schedule;

/// A complete solve pipeline selected by name.
pub trait Strategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn solve(
        &self,
        ev: &GridEvaluator,
        init: &Schedule,
        cfg: &SolverConfig,
        observer: &mut dyn FnMut(&Iterate<'_>),
    ) -> Result<SolveReport>;
}

/// Log-barrier rounds with a decreasing weight; needs a strictly feasible start.
#[derive(Debug, Clone, Copy, Default)]
pub struct BarrierContinuation;

impl Strategy for BarrierContinuation {
    fn name(&self) -> &'static str {
        Mode::Barrier.as_str()
    }

    fn solve(
        &self,
        ev: &GridEvaluator,
        init: &Schedule,
        cfg: &SolverConfig,
        observer: &mut dyn FnMut(&Iterate<'_>),
    ) -> Result<SolveReport> {
        let first: Box<dyn Objective> = Box::new(LogBarrier::new(cfg.epsilon0)?);
        solve_continuation(ev, init, first, cfg, &|_| false, observer)
    }
}

/// Exponential-penalty rounds with increasing sharpness; any start.
#[derive(Debug, Clone, Copy, Default)]
pub struct PenaltyContinuation;

impl Strategy for PenaltyContinuation {
    fn name(&self) -> &'static str {
        Mode::Penalty.as_str()
    }

    fn solve(
        &self,
        ev: &GridEvaluator,
        init: &Schedule,
        cfg: &SolverConfig,
        observer: &mut dyn FnMut(&Iterate<'_>),
    ) -> Result<SolveReport> {
        let first: Box<dyn Objective> = Box::new(ExpPenalty::new(cfg.vartheta0)?);
        let tol = cfg.violation_tol;
        solve_continuation(ev, init, first, cfg, &|r| r.max_violation <= tol, observer)
    }
}

#[derive(Clone)]
pub struct StrategyRegistry {
    entries: BTreeMap<&'static str, Arc<dyn Strategy>>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register(Arc::new(BarrierContinuation));
        r.register(Arc::new(PenaltyContinuation));
        r
    }
}

impl StrategyRegistry {
    pub fn register(&mut self, strategy: Arc<dyn Strategy>) {
        self.entries.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Strategy>> {
        self.entries.get(name).cloned().ok_or_else(|| Error::Unknown {
            kind: "strategy",
            name: name.to_string(),
        })
    }

    pub fn for_mode(&self, mode: Mode) -> Result<Arc<dyn Strategy>> {
        self.get(mode.as_str())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}
