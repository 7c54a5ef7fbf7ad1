use std::collections::BTreeMap;

use super::{ExpPenalty, LogBarrier, Objective};
use crate::error::{Error, Result};

type Constructor = fn(f64) -> Result<Box<dyn Objective>>;

/// Objectives by name, each built from its single scalar parameter.
#[derive(Clone)]
pub struct ObjectiveRegistry {
    entries: BTreeMap<&'static str, Constructor>,
}

impl Default for ObjectiveRegistry {
    fn default() -> Self {
        let mut r = Self {
            entries: BTreeMap::new(),
        };
        r.register(LogBarrier::NAME, |p| Ok(Box::new(LogBarrier::new(p)?)));
        r.register(ExpPenalty::NAME, |p| Ok(Box::new(ExpPenalty::new(p)?)));
        r
    }
}

impl ObjectiveRegistry {
    pub fn register(&mut self, name: &'static str, ctor: Constructor) {
        self.entries.insert(name, ctor);
    }

    pub fn create(&self, name: &str, parameter: f64) -> Result<Box<dyn Objective>> {
        let ctor = self.entries.get(name).ok_or_else(|| Error::Unknown {
            kind: "objective",
            name: name.to_string(),
        })?;
        ctor(parameter)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}
